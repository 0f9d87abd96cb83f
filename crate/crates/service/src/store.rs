use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use reelcrowd_core::comments::{Comment, CommentKind};
use reelcrowd_core::persona::Persona;
use reelcrowd_core::pipeline::Stage;
use reelcrowd_core::video::VideoAsset;
use reelcrowd_core::{Error, Result};
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS videos (
    video_id      TEXT PRIMARY KEY,
    asset_json    TEXT NOT NULL,
    upload_time   TEXT NOT NULL,
    owner         TEXT,
    latest_job_id TEXT,
    next_batch    INTEGER NOT NULL DEFAULT 1,
    seq           INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS jobs (
    job_id      TEXT PRIMARY KEY,
    video_id    TEXT NOT NULL REFERENCES videos(video_id),
    kind        TEXT NOT NULL,
    count       INTEGER NOT NULL,
    batch_index INTEGER NOT NULL,
    stage       TEXT NOT NULL,
    progress    REAL NOT NULL,
    error       TEXT,
    stage_times TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    seq         INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS personas (
    persona_id TEXT PRIMARY KEY,
    text       TEXT NOT NULL,
    source     TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS comments (
    comment_id  TEXT PRIMARY KEY,
    video_id    TEXT NOT NULL REFERENCES videos(video_id),
    kind        TEXT NOT NULL,
    body        TEXT NOT NULL,
    author_name TEXT NOT NULL,
    avatar_seed TEXT NOT NULL,
    persona_id  TEXT REFERENCES personas(persona_id),
    parent_id   TEXT REFERENCES comments(comment_id),
    created_at  TEXT NOT NULL,
    seq         INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS comments_by_video ON comments(video_id, seq);
CREATE INDEX IF NOT EXISTS jobs_by_video ON jobs(video_id, seq);
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    /// Full pipeline from upload to first batch.
    Pipeline,
    /// One more batch from the cached summary and ranking.
    Generate,
}

impl JobKind {
    fn as_str(self) -> &'static str {
        match self {
            JobKind::Pipeline => "pipeline",
            JobKind::Generate => "generate",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "pipeline" => Ok(JobKind::Pipeline),
            "generate" => Ok(JobKind::Generate),
            other => Err(Error::Integrity(format!("unknown job kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub video_id: String,
    pub kind: JobKind,
    pub count: usize,
    pub batch_index: usize,
    pub stage: Stage,
    pub progress: f64,
    pub error: Option<String>,
    /// When each stage was entered.
    pub stage_times: BTreeMap<Stage, DateTime<Utc>>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub asset: VideoAsset,
    pub upload_time: DateTime<Utc>,
    pub owner: Option<String>,
    pub latest_job_id: Option<String>,
}

struct JobRow {
    job_id: String,
    video_id: String,
    kind: String,
    count: i64,
    batch_index: i64,
    stage: String,
    progress: f64,
    error: Option<String>,
    stage_times: String,
    created_at: String,
}

fn db_err(e: rusqlite::Error) -> Error {
    Error::Integrity(format!("store: {e}"))
}

fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Integrity(format!("bad timestamp {s}: {e}")))
}

/// Relational store for videos, jobs, personas and comments.
pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self> {
        Self::init(Connection::open(path).map_err(db_err)?)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory().map_err(db_err)?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.execute_batch("PRAGMA foreign_keys = ON; PRAGMA journal_mode = WAL;")
            .map_err(db_err)?;
        conn.execute_batch(SCHEMA).map_err(db_err)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }

    fn with<T>(&self, f: impl FnOnce(&mut Connection) -> rusqlite::Result<T>) -> Result<T> {
        let mut conn = self.conn.lock().expect("store mutex poisoned");
        f(&mut conn).map_err(db_err)
    }

    pub fn insert_video(
        &self,
        asset: &VideoAsset,
        owner: Option<&str>,
        upload_time: DateTime<Utc>,
    ) -> Result<()> {
        let json = serde_json::to_string(asset)?;
        self.with(|c| {
            c.execute(
                "INSERT INTO videos (video_id, asset_json, upload_time, owner, seq)
                 VALUES (?1, ?2, ?3, ?4, (SELECT COALESCE(MAX(seq), 0) + 1 FROM videos))",
                params![asset.video_id, json, upload_time.to_rfc3339(), owner],
            )
        })?;
        Ok(())
    }

    fn video_from_row(
        row: &Row,
    ) -> rusqlite::Result<(String, String, Option<String>, Option<String>)> {
        Ok((row.get(0)?, row.get(1)?, row.get(2)?, row.get(3)?))
    }

    fn decode_video(raw: (String, String, Option<String>, Option<String>)) -> Result<VideoRecord> {
        let (asset, upload, owner, latest) = raw;
        Ok(VideoRecord {
            asset: serde_json::from_str(&asset)?,
            upload_time: parse_time(&upload)?,
            owner,
            latest_job_id: latest,
        })
    }

    pub fn video(&self, video_id: &str) -> Result<VideoRecord> {
        let raw = self.with(|c| {
            c.query_row(
                "SELECT asset_json, upload_time, owner, latest_job_id FROM videos WHERE video_id = ?1",
                [video_id],
                Self::video_from_row,
            )
            .optional()
        })?;
        Self::decode_video(raw.ok_or_else(|| Error::NotFound(format!("video {video_id}")))?)
    }

    pub fn videos(&self) -> Result<Vec<VideoRecord>> {
        let raws = self.with(|c| {
            let mut st = c.prepare(
                "SELECT asset_json, upload_time, owner, latest_job_id FROM videos ORDER BY seq",
            )?;
            let rows = st.query_map([], Self::video_from_row)?;
            rows.collect::<rusqlite::Result<Vec<_>>>()
        })?;
        raws.into_iter().map(Self::decode_video).collect()
    }

    /// Creates a queued job and makes it the video's latest. Generation
    /// jobs reserve the next batch index so concurrent requests never
    /// collide.
    pub fn create_job(
        &self,
        job_id: &str,
        video_id: &str,
        kind: JobKind,
        count: usize,
        now: DateTime<Utc>,
    ) -> Result<Job> {
        let times: BTreeMap<Stage, DateTime<Utc>> = [(Stage::Queued, now)].into();
        let times_json = serde_json::to_string(&times)?;
        let batch_index = self.with(|c| {
            let tx = c.transaction()?;
            let batch_index: i64 = match kind {
                JobKind::Pipeline => 0,
                JobKind::Generate => {
                    let next: i64 = tx.query_row("SELECT next_batch FROM videos WHERE video_id = ?1", [video_id], |r| r.get(0))?;
                    tx.execute("UPDATE videos SET next_batch = next_batch + 1 WHERE video_id = ?1", [video_id])?;
                    next
                }
            };
            tx.execute(
                "INSERT INTO jobs (job_id, video_id, kind, count, batch_index, stage, progress, stage_times, created_at, seq)
                 VALUES (?1, ?2, ?3, ?4, ?5, 'queued', 0.0, ?6, ?7, (SELECT COALESCE(MAX(seq), 0) + 1 FROM jobs))",
                params![job_id, video_id, kind.as_str(), count as i64, batch_index, times_json, now.to_rfc3339()],
            )?;
            tx.execute("UPDATE videos SET latest_job_id = ?1 WHERE video_id = ?2", [job_id, video_id])?;
            tx.commit()?;
            Ok(batch_index)
        })?;
        Ok(Job {
            job_id: job_id.to_string(),
            video_id: video_id.to_string(),
            kind,
            count,
            batch_index: batch_index as usize,
            stage: Stage::Queued,
            progress: 0.0,
            error: None,
            stage_times: times,
            created_at: now,
        })
    }

    fn job_from_row(row: &Row) -> rusqlite::Result<JobRow> {
        Ok(JobRow {
            job_id: row.get(0)?,
            video_id: row.get(1)?,
            kind: row.get(2)?,
            count: row.get(3)?,
            batch_index: row.get(4)?,
            stage: row.get(5)?,
            progress: row.get(6)?,
            error: row.get(7)?,
            stage_times: row.get(8)?,
            created_at: row.get(9)?,
        })
    }

    fn decode_job(raw: JobRow) -> Result<Job> {
        Ok(Job {
            job_id: raw.job_id,
            video_id: raw.video_id,
            kind: JobKind::parse(&raw.kind)?,
            count: raw.count as usize,
            batch_index: raw.batch_index as usize,
            stage: raw.stage.parse()?,
            progress: raw.progress,
            error: raw.error,
            stage_times: serde_json::from_str(&raw.stage_times)?,
            created_at: parse_time(&raw.created_at)?,
        })
    }

    const JOB_COLUMNS: &'static str =
        "job_id, video_id, kind, count, batch_index, stage, progress, error, stage_times, created_at";

    pub fn job(&self, job_id: &str) -> Result<Job> {
        let sql = format!("SELECT {} FROM jobs WHERE job_id = ?1", Self::JOB_COLUMNS);
        let raw = self.with(|c| c.query_row(&sql, [job_id], Self::job_from_row).optional())?;
        Self::decode_job(raw.ok_or_else(|| Error::NotFound(format!("job {job_id}")))?)
    }

    /// Jobs that were queued or running, oldest first.
    pub fn unfinished_jobs(&self) -> Result<Vec<Job>> {
        let sql = format!(
            "SELECT {} FROM jobs WHERE stage NOT IN ('done', 'failed') ORDER BY seq",
            Self::JOB_COLUMNS
        );
        let raws = self.with(|c| {
            let mut st = c.prepare(&sql)?;
            let rows = st.query_map([], Self::job_from_row)?;
            rows.collect::<rusqlite::Result<Vec<_>>>()
        })?;
        raws.into_iter().map(Self::decode_job).collect()
    }

    /// Moves a job forward. Progress never decreases and a terminal job is
    /// never touched again.
    pub fn update_job(
        &self,
        job_id: &str,
        stage: Stage,
        progress: f64,
        now: DateTime<Utc>,
    ) -> Result<()> {
        let job = self.job(job_id)?;
        if job.stage.is_terminal() {
            return Ok(());
        }
        let mut times = job.stage_times;
        times.entry(stage).or_insert(now);
        let stage = stage.max(job.stage);
        let progress = progress.clamp(0.0, 1.0).max(job.progress);
        let times_json = serde_json::to_string(&times)?;
        self.with(|c| {
            c.execute(
                "UPDATE jobs SET stage = ?1, progress = ?2, stage_times = ?3 WHERE job_id = ?4",
                params![stage.as_str(), progress, times_json, job_id],
            )
        })?;
        Ok(())
    }

    pub fn fail_job(&self, job_id: &str, error: &str, now: DateTime<Utc>) -> Result<()> {
        let job = self.job(job_id)?;
        let mut times = job.stage_times;
        times.insert(Stage::Failed, now);
        let times_json = serde_json::to_string(&times)?;
        self.with(|c| {
            c.execute(
                "UPDATE jobs SET stage = 'failed', error = ?1, stage_times = ?2 WHERE job_id = ?3",
                params![error, times_json, job_id],
            )
        })?;
        Ok(())
    }

    /// Any job for the video still waiting or running.
    pub fn has_active_job(&self, video_id: &str) -> Result<bool> {
        self.with(|c| {
            c.query_row(
                "SELECT EXISTS(SELECT 1 FROM jobs WHERE video_id = ?1 AND stage NOT IN ('done', 'failed'))",
                [video_id],
                |r| r.get(0),
            )
        })
    }

    /// Persists comments and the personas they reference in one
    /// transaction. Comments already present are left as they are, so a
    /// resumed job can replay its batch.
    pub fn insert_comments(&self, comments: &[Comment], personas: &[Persona]) -> Result<()> {
        self.with(|c| {
            let tx = c.transaction()?;
            for p in personas {
                let source = serde_json::to_value(p.source).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                tx.execute(
                    "INSERT OR IGNORE INTO personas (persona_id, text, source) VALUES (?1, ?2, ?3)",
                    params![p.persona_id, p.text, source],
                )?;
            }
            for cm in comments {
                tx.execute(
                    "INSERT OR IGNORE INTO comments
                     (comment_id, video_id, kind, body, author_name, avatar_seed, persona_id, parent_id, created_at, seq)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, (SELECT COALESCE(MAX(seq), 0) + 1 FROM comments))",
                    params![
                        cm.comment_id,
                        cm.video_id,
                        cm.kind.as_str(),
                        cm.body,
                        cm.author_name,
                        cm.avatar_seed,
                        cm.persona_id,
                        cm.parent_id,
                        cm.created_at.to_rfc3339()
                    ],
                )?;
            }
            tx.commit()
        })
    }

    /// Inserts a batch and marks its job done atomically.
    pub fn complete_job(
        &self,
        job_id: &str,
        comments: &[Comment],
        personas: &[Persona],
        now: DateTime<Utc>,
    ) -> Result<()> {
        self.insert_comments(comments, personas)?;
        self.update_job(job_id, Stage::Done, 1.0, now)
    }

    pub fn comment(&self, comment_id: &str) -> Result<Comment> {
        let raw = self.with(|c| {
            c.query_row(
                "SELECT comment_id, video_id, kind, body, author_name, avatar_seed, persona_id, parent_id, created_at
                 FROM comments WHERE comment_id = ?1",
                [comment_id],
                Self::comment_row,
            )
            .optional()
        })?;
        Self::decode_comment(raw.ok_or_else(|| Error::NotFound(format!("comment {comment_id}")))?)
    }

    fn comment_row(row: &Row) -> rusqlite::Result<[Option<String>; 9]> {
        Ok([
            row.get(0)?,
            row.get(1)?,
            row.get(2)?,
            row.get(3)?,
            row.get(4)?,
            row.get(5)?,
            row.get(6)?,
            row.get(7)?,
            row.get(8)?,
        ])
    }

    fn decode_comment(raw: [Option<String>; 9]) -> Result<Comment> {
        let [id, video, kind, body, author, avatar, persona, parent, created] = raw;
        let take =
            |v: Option<String>| v.ok_or_else(|| Error::Integrity("null comment column".into()));
        Ok(Comment {
            comment_id: take(id)?,
            video_id: take(video)?,
            kind: take(kind)?.parse::<CommentKind>()?,
            body: take(body)?,
            author_name: take(author)?,
            avatar_seed: take(avatar)?,
            persona_id: persona,
            parent_id: parent,
            created_at: parse_time(&take(created)?)?,
        })
    }

    /// Comments of one video in insertion order.
    pub fn comments(&self, video_id: &str) -> Result<Vec<Comment>> {
        let raws = self.with(|c| {
            let mut st = c.prepare(
                "SELECT comment_id, video_id, kind, body, author_name, avatar_seed, persona_id, parent_id, created_at
                 FROM comments WHERE video_id = ?1 ORDER BY seq",
            )?;
            let rows = st.query_map([video_id], Self::comment_row)?;
            rows.collect::<rusqlite::Result<Vec<_>>>()
        })?;
        raws.into_iter().map(Self::decode_comment).collect()
    }

    pub fn persona(&self, persona_id: &str) -> Result<Option<Persona>> {
        let raw: Option<(String, String)> = self.with(|c| {
            c.query_row(
                "SELECT text, source FROM personas WHERE persona_id = ?1",
                [persona_id],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()
        })?;
        raw.map(|(text, source)| {
            Ok(Persona {
                persona_id: persona_id.to_string(),
                text,
                source: serde_json::from_value(serde_json::Value::String(source))?,
            })
        })
        .transpose()
    }

    pub fn persona_texts(&self, video_id: &str) -> Result<BTreeMap<String, String>> {
        self.with(|c| {
            let mut st = c.prepare(
                "SELECT DISTINCT p.persona_id, p.text FROM personas p
                 JOIN comments c ON c.persona_id = p.persona_id WHERE c.video_id = ?1",
            )?;
            let rows = st.query_map([video_id], |r| Ok((r.get(0)?, r.get(1)?)))?;
            rows.collect()
        })
    }
}
