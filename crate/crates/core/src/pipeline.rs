//! Stage orchestration from an uploaded video to a first comment batch.
//!
//! Every stage writes its output into the video's artifact directory and
//! is skipped when that output is already present, so an interrupted run
//! picks up where it stopped.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::comments::{plan_batch, Comment, CommentEngine, VideoContext};
use crate::config::{AppConfig, ProgressWeights};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::gateway::{normalize_transcript, Gateways, TranscriptSegment};
use crate::persona::{rank_personas, Persona, PersonaIndex, RankedPersona, RankingOptions};
use crate::summary::{build_summary_prompt, summarize, VideoSummary};
use crate::video::{
    align_dialogue, assemble_panels, caption_panels, describe_thumbnail, encode_png, extract_audio,
    extract_frames, FrameCaption, FrameSampling, VideoAsset, PANEL_FRAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Queued,
    Transcribing,
    Captioning,
    Summarizing,
    RankingPersonas,
    GeneratingComments,
    Done,
    Failed,
}

impl Stage {
    pub const WORKING: [Stage; 5] = [
        Stage::Transcribing,
        Stage::Captioning,
        Stage::Summarizing,
        Stage::RankingPersonas,
        Stage::GeneratingComments,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Queued => "queued",
            Stage::Transcribing => "transcribing",
            Stage::Captioning => "captioning",
            Stage::Summarizing => "summarizing",
            Stage::RankingPersonas => "ranking_personas",
            Stage::GeneratingComments => "generating_comments",
            Stage::Done => "done",
            Stage::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Done | Stage::Failed)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Stage::Queued,
            Stage::Transcribing,
            Stage::Captioning,
            Stage::Summarizing,
            Stage::RankingPersonas,
            Stage::GeneratingComments,
            Stage::Done,
            Stage::Failed,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| Error::input(format!("unknown stage {s}")))
    }
}

impl ProgressWeights {
    /// Overall progress at the start of a working stage.
    pub fn start_of(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Queued => 0.0,
            Stage::Done => 1.0,
            Stage::Failed => 0.0,
            working => {
                let w = self.as_array();
                let pos = Stage::WORKING
                    .iter()
                    .position(|s| *s == working)
                    .unwrap_or(0);
                w[..pos].iter().fold(0.0, |acc, x| acc + x)
            }
        }
    }

    pub fn within(&self, stage: Stage, fraction: f64) -> f64 {
        let span = match Stage::WORKING.iter().position(|s| *s == stage) {
            Some(pos) => self.as_array()[pos],
            None => 0.0,
        };
        (self.start_of(stage) + span * fraction.clamp(0.0, 1.0)).min(1.0)
    }
}

/// Receives (stage, overall progress) updates.
pub trait ProgressSink: Send + Sync {
    fn report(&self, stage: Stage, progress: f64);
}

pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn report(&self, _: Stage, _: f64) {}
}

impl<F: Fn(Stage, f64) + Send + Sync> ProgressSink for F {
    fn report(&self, stage: Stage, progress: f64) {
        self(stage, progress)
    }
}

/// File layout of one video's intermediate results.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactDir {
    root: PathBuf,
}

impl ArtifactDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The ingested video description, so later commands can find it.
    pub fn asset(&self) -> PathBuf {
        self.root.join("asset.json")
    }

    pub fn transcript(&self) -> PathBuf {
        self.root.join("transcript.json")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn panels_dir(&self) -> PathBuf {
        self.root.join("panels")
    }

    pub fn captions(&self) -> PathBuf {
        self.root.join("captions.json")
    }

    pub fn thumbnail(&self) -> PathBuf {
        self.root.join("thumbnail.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn ranking(&self) -> PathBuf {
        self.root.join("ranking.json")
    }

    pub fn comments(&self) -> PathBuf {
        self.root.join("comments.json")
    }

    /// The JSON artifacts a completed run leaves behind, in stage order.
    pub fn stage_files(&self) -> Vec<PathBuf> {
        vec![
            self.transcript(),
            self.captions(),
            self.thumbnail(),
            self.summary(),
            self.ranking(),
            self.comments(),
        ]
    }

    pub fn has_summary(&self) -> bool {
        self.summary().is_file()
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(|e| {
            Error::Integrity(format!("corrupt artifact {}: {e}", path.display()))
        })?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThumbnailDescription {
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub sampling: FrameSampling,
    pub max_duration_secs: f64,
    pub caption_parallelism: usize,
    pub ranking: RankingOptions,
    pub batch_size: usize,
    pub seed: u64,
    /// Ablation mode: no persona ranking, no persona in prompts.
    pub no_persona: bool,
    pub weights: ProgressWeights,
}

impl PipelineSettings {
    pub fn from_config(config: &AppConfig, no_persona: bool) -> Self {
        Self {
            sampling: config.video.sampling(),
            max_duration_secs: config.video.max_duration_secs,
            caption_parallelism: config.video.caption_parallelism,
            ranking: config.persona.ranking(),
            batch_size: config.generation.batch_size,
            seed: config.seed,
            no_persona,
            weights: config.progress,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub transcript: Vec<TranscriptSegment>,
    pub captions: Vec<FrameCaption>,
    pub thumbnail_description: Option<String>,
    pub summary: VideoSummary,
    pub ranking: Vec<RankedPersona>,
    pub comments: Vec<Comment>,
}

pub struct Pipeline {
    gateways: Gateways,
    engine: CommentEngine,
    index: Option<Arc<PersonaIndex>>,
    clock: Arc<dyn Clock>,
    settings: PipelineSettings,
}

impl Pipeline {
    pub fn new(
        gateways: Gateways,
        engine: CommentEngine,
        index: Option<Arc<PersonaIndex>>,
        clock: Arc<dyn Clock>,
        settings: PipelineSettings,
    ) -> Result<Self> {
        if !settings.no_persona && index.is_none() {
            return Err(Error::Config(
                "a persona index is required unless persona conditioning is off".into(),
            ));
        }
        Ok(Self {
            gateways,
            engine,
            index,
            clock,
            settings,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn engine(&self) -> &CommentEngine {
        &self.engine
    }

    pub fn index(&self) -> Option<&PersonaIndex> {
        self.index.as_deref()
    }

    pub async fn run(
        &self,
        asset: &VideoAsset,
        dir: &ArtifactDir,
        progress: &dyn ProgressSink,
    ) -> Result<PipelineOutput> {
        if asset.duration > self.settings.max_duration_secs {
            return Err(Error::input(format!(
                "video lasts {:.1} s, longer than the {:.0} s limit",
                asset.duration, self.settings.max_duration_secs
            ))
            .at_stage(Stage::Transcribing.as_str()));
        }
        if !dir.asset().is_file() {
            write_json_atomic(&dir.asset(), asset)?;
        }
        let w = self.settings.weights;

        progress.report(Stage::Transcribing, w.start_of(Stage::Transcribing));
        let transcript = self
            .transcribe(asset, dir)
            .await
            .map_err(|e| e.at_stage("transcribing"))?;

        progress.report(Stage::Captioning, w.start_of(Stage::Captioning));
        let captions = self
            .caption(asset, dir, &transcript, progress)
            .await
            .map_err(|e| e.at_stage("captioning"))?;
        let thumbnail_description = self
            .thumbnail(asset, dir)
            .await
            .map_err(|e| e.at_stage("captioning"))?;

        progress.report(Stage::Summarizing, w.start_of(Stage::Summarizing));
        let summary = self
            .summarize(
                asset,
                dir,
                &captions,
                &transcript,
                thumbnail_description.as_deref(),
            )
            .await
            .map_err(|e| e.at_stage("summarizing"))?;

        progress.report(Stage::RankingPersonas, w.start_of(Stage::RankingPersonas));
        let ranking = self
            .rank(dir, &summary)
            .await
            .map_err(|e| e.at_stage("ranking_personas"))?;

        progress.report(
            Stage::GeneratingComments,
            w.start_of(Stage::GeneratingComments),
        );
        let ctx = VideoContext {
            video_id: asset.video_id.clone(),
            metadata: asset.metadata(),
            thumbnail_description: thumbnail_description.clone(),
            summary: summary.clone(),
        };
        let comments = match read_json::<Vec<Comment>>(&dir.comments())? {
            Some(c) => c,
            None => {
                let c = self
                    .generate(&ctx, &ranking, self.settings.batch_size, 0)
                    .await
                    .map_err(|e| e.at_stage("generating_comments"))?;
                write_json_atomic(&dir.comments(), &c)?;
                c
            }
        };
        progress.report(Stage::Done, 1.0);
        Ok(PipelineOutput {
            transcript,
            captions,
            thumbnail_description,
            summary,
            ranking,
            comments,
        })
    }

    async fn transcribe(
        &self,
        asset: &VideoAsset,
        dir: &ArtifactDir,
    ) -> Result<Vec<TranscriptSegment>> {
        if let Some(t) = read_json(&dir.transcript())? {
            return Ok(t);
        }
        let audio = {
            let asset = asset.clone();
            tokio::task::spawn_blocking(move || extract_audio(&asset))
                .await
                .map_err(|e| Error::Integrity(format!("audio extraction panicked: {e}")))??
        };
        let transcript = match audio {
            Some(clip) => normalize_transcript(self.gateways.transcriber.transcribe(&clip).await?)?,
            None => Vec::new(),
        };
        write_json_atomic(&dir.transcript(), &transcript)?;
        Ok(transcript)
    }

    async fn caption(
        &self,
        asset: &VideoAsset,
        dir: &ArtifactDir,
        transcript: &[TranscriptSegment],
        progress: &dyn ProgressSink,
    ) -> Result<Vec<FrameCaption>> {
        if let Some(c) = read_json(&dir.captions())? {
            return Ok(c);
        }
        let sampling = self.settings.sampling;
        let frames = {
            let asset = asset.clone();
            tokio::task::spawn_blocking(move || extract_frames(&asset, sampling))
                .await
                .map_err(|e| Error::Integrity(format!("frame extraction panicked: {e}")))??
        };
        let window = PANEL_FRAMES as f64 / sampling.sample_rate;
        let dialogue = align_dialogue(&frames, transcript, sampling.sample_rate, window);
        let panels = assemble_panels(&frames, &dialogue)?;

        std::fs::create_dir_all(dir.frames_dir())?;
        for f in &frames {
            write_atomic(
                &dir.frames_dir().join(format!("frame_{:05}.png", f.index)),
                &encode_png(&f.image)?,
            )?;
        }
        std::fs::create_dir_all(dir.panels_dir())?;
        for p in &panels {
            write_atomic(
                &dir.panels_dir()
                    .join(format!("panel_{:05}.png", p.panel_index)),
                &encode_png(&p.composite)?,
            )?;
        }

        let w = self.settings.weights;
        let captions = caption_panels(
            &panels,
            self.gateways.captioner.as_ref(),
            self.settings.caption_parallelism,
            |done, total| {
                progress.report(
                    Stage::Captioning,
                    w.within(Stage::Captioning, done as f64 / total as f64),
                );
            },
        )
        .await?;
        write_json_atomic(&dir.captions(), &captions)?;
        Ok(captions)
    }

    async fn thumbnail(&self, asset: &VideoAsset, dir: &ArtifactDir) -> Result<Option<String>> {
        let Some(path) = &asset.thumbnail else {
            return Ok(None);
        };
        if let Some(t) = read_json::<ThumbnailDescription>(&dir.thumbnail())? {
            return Ok(Some(t.description));
        }
        let description = describe_thumbnail(path, self.gateways.captioner.as_ref()).await?;
        write_json_atomic(
            &dir.thumbnail(),
            &ThumbnailDescription {
                description: description.clone(),
            },
        )?;
        Ok(Some(description))
    }

    async fn summarize(
        &self,
        asset: &VideoAsset,
        dir: &ArtifactDir,
        captions: &[FrameCaption],
        transcript: &[TranscriptSegment],
        thumbnail: Option<&str>,
    ) -> Result<VideoSummary> {
        if let Some(s) = read_json(&dir.summary())? {
            return Ok(s);
        }
        let chat = self.gateways.chat.as_ref();
        let prompt = build_summary_prompt(
            captions,
            transcript,
            &asset.metadata(),
            thumbnail,
            chat.context_budget(),
            0.0,
        )?;
        let summary = summarize(&prompt, chat, &asset.video_id, self.clock.as_ref()).await?;
        write_json_atomic(&dir.summary(), &summary)?;
        Ok(summary)
    }

    async fn rank(&self, dir: &ArtifactDir, summary: &VideoSummary) -> Result<Vec<RankedPersona>> {
        if self.settings.no_persona {
            return Ok(Vec::new());
        }
        if let Some(r) = read_json(&dir.ranking())? {
            return Ok(r);
        }
        let index = self.index.as_ref().expect("checked at construction");
        let ranking = rank_personas(
            index,
            &summary.keywords,
            self.gateways.embedder.as_ref(),
            self.settings.ranking,
        )
        .await?;
        write_json_atomic(&dir.ranking(), &ranking)?;
        Ok(ranking)
    }

    /// Personas for a stored ranking, in rank order.
    pub fn ranked_personas(&self, ranking: &[RankedPersona]) -> Result<Vec<Persona>> {
        if self.settings.no_persona {
            return Ok(Vec::new());
        }
        let index = self.index.as_ref().expect("checked at construction");
        ranking
            .iter()
            .map(|r| {
                index.persona(&r.persona_id).ok_or_else(|| {
                    Error::Integrity(format!(
                        "ranked persona {} missing from index",
                        r.persona_id
                    ))
                })
            })
            .collect()
    }

    /// One batch of `count` comments; `batch_index` keeps ids and persona
    /// assignment distinct from earlier batches.
    pub async fn generate(
        &self,
        ctx: &VideoContext,
        ranking: &[RankedPersona],
        count: usize,
        batch_index: usize,
    ) -> Result<Vec<Comment>> {
        let plan = plan_batch(count)?;
        let personas = self.ranked_personas(ranking)?;
        if !self.settings.no_persona && personas.is_empty() {
            tracing::warn!(video = %ctx.video_id, "no persona passed the score floor, generating without personas");
        }
        self.engine
            .generate_batch(ctx, &personas, plan, batch_index, self.settings.seed)
            .await
    }
}

pub fn load_asset(dir: &ArtifactDir) -> Result<VideoAsset> {
    read_json(&dir.asset())?
        .ok_or_else(|| Error::NotFound(format!("video description in {}", dir.root().display())))
}

/// Loads the stored context for a video whose summary already exists.
pub fn load_context(
    asset: &VideoAsset,
    dir: &ArtifactDir,
) -> Result<Option<(VideoContext, Vec<RankedPersona>)>> {
    let Some(summary) = read_json::<VideoSummary>(&dir.summary())? else {
        return Ok(None);
    };
    let thumbnail = read_json::<ThumbnailDescription>(&dir.thumbnail())?.map(|t| t.description);
    let ranking = read_json::<Vec<RankedPersona>>(&dir.ranking())?.unwrap_or_default();
    Ok(Some((
        VideoContext {
            video_id: asset.video_id.clone(),
            metadata: asset.metadata(),
            thumbnail_description: thumbnail,
            summary,
        },
        ranking,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unit_interval() {
        let w = ProgressWeights::default();
        let mut last = 0.0;
        for s in Stage::WORKING {
            let start = w.start_of(s);
            assert!(start >= last);
            assert!(w.within(s, 1.0) >= start);
            last = w.within(s, 1.0);
        }
        assert!((last - 1.0).abs() < 1e-12);
        // half the panels captioned sits strictly between the neighbours
        let mid = w.within(Stage::Captioning, 0.5);
        assert!(mid > w.start_of(Stage::Captioning) && mid < w.start_of(Stage::Summarizing));
    }

    #[test]
    fn stage_names_round_trip() {
        for s in [
            Stage::Queued,
            Stage::RankingPersonas,
            Stage::Done,
            Stage::Failed,
        ] {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
            assert_eq!(
                serde_json::to_string(&s).unwrap(),
                format!("\"{}\"", s.as_str())
            );
        }
    }
}
