use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use reelcrowd_core::clock::Clock;
use reelcrowd_core::comments::{
    ancestry, build_forest, conversation_persona, Comment, CommentNode,
};
use reelcrowd_core::persona::Persona;
use reelcrowd_core::pipeline::{load_context, Pipeline};
use reelcrowd_core::video::{Container, VideoAsset, VideoMetadata};
use reelcrowd_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::io::AsyncWriteExt;
use tower_http::services::ServeDir;

use crate::jobs::{artifact_dir, video_dir, JobRunner};
use crate::store::{Job, JobKind, Store, VideoRecord};

pub const TOKEN_HEADER: &str = "x-api-token";
/// Upper bound for one generate-more request.
pub const MAX_GENERATE_COUNT: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub runner: Arc<JobRunner>,
    pub pipeline: Arc<Pipeline>,
    pub data_dir: PathBuf,
    pub clock: Arc<dyn Clock>,
    pub api_token: Option<String>,
    pub batch_size: usize,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError(Error::Io(e))
    }
}

fn status_of(e: &Error) -> (StatusCode, &'static str) {
    match e.root() {
        Error::Input(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
        Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
        Error::Budget { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "budget"),
        Error::Transport { .. } => (StatusCode::BAD_GATEWAY, "transport"),
        Error::Parse { .. } | Error::Generation(_) => (StatusCode::BAD_GATEWAY, "generation"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = status_of(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (
            status,
            Json(json!({"error": {"kind": kind, "message": self.0.to_string()}})),
        )
            .into_response()
    }
}

fn unsupported_media(message: &str) -> Response {
    (
        StatusCode::UNSUPPORTED_MEDIA_TYPE,
        Json(json!({"error": {"kind": "unsupported_media", "message": message}})),
    )
        .into_response()
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct VideoView {
    pub video_id: String,
    pub title: String,
    pub description: String,
    pub author: String,
    pub container: Container,
    pub duration: f64,
    pub has_thumbnail: bool,
    pub upload_time: DateTime<Utc>,
    pub owner: Option<String>,
    pub latest_job_id: Option<String>,
    pub file_url: String,
}

impl From<VideoRecord> for VideoView {
    fn from(r: VideoRecord) -> Self {
        Self {
            file_url: format!("/api/videos/{}/file", r.asset.video_id),
            video_id: r.asset.video_id,
            title: r.asset.title,
            description: r.asset.description,
            author: r.asset.author,
            container: r.asset.container,
            duration: r.asset.duration,
            has_thumbnail: r.asset.thumbnail.is_some(),
            upload_time: r.upload_time,
            owner: r.owner,
            latest_job_id: r.latest_job_id,
        }
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>, max_upload_bytes: usize) -> Router {
    let mutating = Router::new()
        .route("/api/videos", post(create_video))
        .route("/api/comments/:comment_id/replies", post(post_reply))
        .route(
            "/api/videos/:video_id/custom-persona",
            post(post_custom_persona),
        )
        .route("/api/videos/:video_id/generate", post(request_more))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let reading = Router::new()
        .route("/api/videos", get(list_videos))
        .route("/api/videos/:video_id", get(get_video))
        .route("/api/videos/:video_id/comments", get(list_comments))
        .route("/api/videos/:video_id/file", get(get_file))
        .route("/api/jobs/:job_id", get(get_job))
        .route(
            "/api/health",
            get(|| async { Json(json!({"status": "ok"})) }),
        );
    let app = mutating
        .merge(reading)
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

async fn require_token(
    State(state): State<AppState>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    if let Some(expected) = &state.api_token {
        let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return (
                StatusCode::UNAUTHORIZED,
                Json(json!({"error": {"kind": "unauthorized", "message": "missing or wrong api token"}})),
            )
                .into_response();
        }
    }
    next.run(req).await
}

fn new_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

#[derive(Default)]
struct UploadForm {
    file: Option<(PathBuf, u64)>,
    thumbnail: Option<Vec<u8>>,
    audio: Option<Vec<u8>>,
    text: BTreeMap<String, String>,
}

async fn read_upload(dir: &std::path::Path, mut multipart: Multipart) -> ApiResult<UploadForm> {
    let mut form = UploadForm::default();
    let bad = |e: axum::extract::multipart::MultipartError| {
        Error::input(format!("malformed upload: {e}"))
    };
    while let Some(mut field) = multipart.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "file" => {
                let path = dir.join("upload.part");
                let mut out = tokio::fs::File::create(&path).await?;
                let mut written = 0u64;
                while let Some(chunk) = field.chunk().await.map_err(bad)? {
                    written += chunk.len() as u64;
                    out.write_all(&chunk).await?;
                }
                out.flush().await?;
                form.file = Some((path, written));
            }
            "thumbnail" => form.thumbnail = Some(field.bytes().await.map_err(bad)?.to_vec()),
            "audio" => form.audio = Some(field.bytes().await.map_err(bad)?.to_vec()),
            _ => {
                let value = field.text().await.map_err(bad)?;
                form.text.insert(name, value);
            }
        }
    }
    Ok(form)
}

async fn create_video(State(state): State<AppState>, multipart: Multipart) -> ApiResult<Response> {
    let video_id = new_id("v");
    let dir = video_dir(&state.data_dir, &video_id);
    tokio::fs::create_dir_all(&dir).await?;
    let result = ingest_upload(&state, &video_id, &dir, multipart).await;
    if !matches!(&result, Ok(r) if r.status() == StatusCode::CREATED) {
        let _ = tokio::fs::remove_dir_all(&dir).await;
    }
    result
}

async fn ingest_upload(
    state: &AppState,
    video_id: &str,
    dir: &std::path::Path,
    multipart: Multipart,
) -> ApiResult<Response> {
    let form = read_upload(dir, multipart).await?;
    let (part, size) = form
        .file
        .ok_or_else(|| Error::input("the `file` field is required"))?;
    if size == 0 {
        return Err(Error::input("uploaded file is empty").into());
    }
    let title = form
        .text
        .get("title")
        .map(|t| t.trim().to_string())
        .unwrap_or_default();
    if title.is_empty() {
        return Err(Error::input("title is required").into());
    }
    let mut head = [0u8; 16];
    let n = {
        use std::io::Read;
        std::fs::File::open(&part)?.read(&mut head)?
    };
    let Some(container) = Container::sniff(&head[..n]) else {
        return Ok(unsupported_media(
            "unsupported video container; use MP4, WebM, Y4M or GIF",
        ));
    };
    let source = dir.join(format!("source.{}", container.extension()));
    tokio::fs::rename(&part, &source).await?;

    let thumbnail = match form.thumbnail.filter(|b| !b.is_empty()) {
        Some(bytes) => {
            let format = image::guess_format(&bytes)
                .map_err(|_| Error::input("thumbnail is not a recognised image"))?;
            let ext = format.extensions_str().first().copied().unwrap_or("img");
            let path = dir.join(format!("thumbnail.{ext}"));
            tokio::fs::write(&path, bytes).await?;
            Some(path)
        }
        None => None,
    };
    let audio = match form.audio.filter(|b| !b.is_empty()) {
        Some(bytes) => {
            if !bytes.starts_with(b"RIFF") {
                return Err(Error::input("audio track must be a WAV file").into());
            }
            let path = dir.join("source.wav");
            tokio::fs::write(&path, bytes).await?;
            Some(path)
        }
        None => None,
    };
    let metadata = VideoMetadata {
        title,
        description: form.text.get("description").cloned().unwrap_or_default(),
        author: form.text.get("author").cloned().unwrap_or_default(),
    };
    let asset = {
        let id = video_id.to_string();
        tokio::task::spawn_blocking(move || {
            VideoAsset::ingest(id, source, metadata, thumbnail, audio)
        })
        .await
        .map_err(|e| Error::Integrity(format!("ingest panicked: {e}")))??
    };
    let owner = form
        .text
        .get("owner")
        .map(|s| s.trim())
        .filter(|s| !s.is_empty());
    state.store.insert_video(&asset, owner, state.clock.now())?;
    let job = state.store.create_job(
        &new_id("j"),
        video_id,
        JobKind::Pipeline,
        state.batch_size,
        state.clock.now(),
    )?;
    state.runner.enqueue(&job);
    let video: VideoView = state.store.video(video_id)?.into();
    Ok((
        StatusCode::CREATED,
        Json(json!({"video": video, "job_id": job.job_id})),
    )
        .into_response())
}

async fn list_videos(State(state): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let videos: Vec<VideoView> = state.store.videos()?.into_iter().map(Into::into).collect();
    Ok(Json(json!({ "videos": videos })))
}

async fn get_video(
    State(state): State<AppState>,
    Path(video_id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let record = state.store.video(&video_id)?;
    let job = record
        .latest_job_id
        .as_deref()
        .map(|id| state.store.job(id))
        .transpose()?;
    let video: VideoView = record.into();
    Ok(Json(json!({ "video": video, "job": job })))
}

async fn get_job(
    State(state): State<AppState>,
    Path(job_id): Path<String>,
) -> ApiResult<Json<Job>> {
    Ok(Json(state.store.job(&job_id)?))
}

fn forest(state: &AppState, video_id: &str) -> Result<Vec<CommentNode>, Error> {
    let comments = state.store.comments(video_id)?;
    let texts = state.store.persona_texts(video_id)?;
    build_forest(&comments, |id| texts.get(id).cloned())
}

async fn list_comments(
    State(state): State<AppState>,
    Path(video_id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let record = state.store.video(&video_id)?;
    let comments = state.store.comments(&video_id)?;
    let nodes = forest(&state, &video_id)?;
    Ok(Json(json!({
        "video_id": video_id,
        "job_id": record.latest_job_id,
        "total": comments.len(),
        "comments": nodes,
    })))
}

async fn get_file(
    State(state): State<AppState>,
    Path(video_id): Path<String>,
) -> ApiResult<Response> {
    let asset = state.store.video(&video_id)?.asset;
    let bytes = tokio::fs::read(&asset.file_path).await?;
    let mime = match asset.container {
        Container::Mp4 => "video/mp4",
        Container::WebM => "video/webm",
        Container::Gif => "image/gif",
        Container::Y4m => "video/x-yuv4mpeg",
    };
    Ok(([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response())
}

fn context_for(
    state: &AppState,
    asset: &VideoAsset,
) -> Result<reelcrowd_core::comments::VideoContext, Error> {
    let dir = artifact_dir(&state.data_dir, &asset.video_id)?;
    load_context(asset, &dir)?
        .map(|(ctx, _)| ctx)
        .ok_or_else(|| {
            Error::Conflict(format!(
                "video {} is still being processed; wait for its job",
                asset.video_id
            ))
        })
}

fn node(state: &AppState, comment: Comment) -> Result<CommentNode, Error> {
    let persona_text = match &comment.persona_id {
        Some(id) => state.store.persona(id)?.map(|p| p.text),
        None => None,
    };
    Ok(CommentNode {
        comment,
        persona_text,
        children: Vec::new(),
    })
}

#[derive(Deserialize)]
struct ReplyRequest {
    body: String,
}

async fn post_reply(
    State(state): State<AppState>,
    Path(comment_id): Path<String>,
    Json(req): Json<ReplyRequest>,
) -> ApiResult<Response> {
    let target = state.store.comment(&comment_id)?;
    let asset = state.store.video(&target.video_id)?.asset;
    let ctx = context_for(&state, &asset)?;
    let user = Comment::creator_reply(new_id("u"), &target, &req.body, state.clock.now())?;
    let mut chain = ancestry(&state.store.comments(&target.video_id)?, &comment_id)?;
    state
        .store
        .insert_comments(std::slice::from_ref(&user), &[])?;
    chain.push(user.clone());
    let persona = match conversation_persona(&chain) {
        Some(id) => state.store.persona(id)?,
        None => None,
    };
    let reply = state
        .pipeline
        .engine()
        .generate_reply(&ctx, &chain, persona.as_ref(), new_id("c"))
        .await?;
    state
        .store
        .insert_comments(std::slice::from_ref(&reply), &[])?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "user_comment": node(&state, user)?, "reply": node(&state, reply)? })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct CustomPersonaRequest {
    persona_text: String,
}

async fn post_custom_persona(
    State(state): State<AppState>,
    Path(video_id): Path<String>,
    Json(req): Json<CustomPersonaRequest>,
) -> ApiResult<Response> {
    let asset = state.store.video(&video_id)?.asset;
    let persona = Persona::user_defined(&req.persona_text)?;
    let ctx = context_for(&state, &asset)?;
    let comment = state
        .pipeline
        .engine()
        .generate_custom(&ctx, &persona, new_id("c"))
        .await?;
    state.store.insert_comments(
        std::slice::from_ref(&comment),
        std::slice::from_ref(&persona),
    )?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "comment": node(&state, comment)? })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct GenerateRequest {
    count: usize,
}

async fn request_more(
    State(state): State<AppState>,
    Path(video_id): Path<String>,
    Json(req): Json<GenerateRequest>,
) -> ApiResult<Response> {
    let asset = state.store.video(&video_id)?.asset;
    if req.count == 0 || req.count > MAX_GENERATE_COUNT {
        return Err(
            Error::input(format!("count must be between 1 and {MAX_GENERATE_COUNT}")).into(),
        );
    }
    context_for(&state, &asset)?;
    let job = state.store.create_job(
        &new_id("j"),
        &video_id,
        JobKind::Generate,
        req.count,
        state.clock.now(),
    )?;
    state.runner.enqueue(&job);
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job.job_id }))).into_response())
}
