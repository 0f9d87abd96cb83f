use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use reelcrowd_core::clock::Clock;
use reelcrowd_core::persona::Persona;
use reelcrowd_core::pipeline::{load_context, ArtifactDir, Pipeline, ProgressSink, Stage};
use reelcrowd_core::{Error, Result};
use tokio::sync::{mpsc, Semaphore};
use tokio::task::AbortHandle;

use crate::store::{Job, JobKind, Store};

/// Where a video's upload and intermediate artifacts live.
pub fn video_dir(data_dir: &Path, video_id: &str) -> PathBuf {
    data_dir.join("videos").join(video_id)
}

pub fn artifact_dir(data_dir: &Path, video_id: &str) -> Result<ArtifactDir> {
    ArtifactDir::new(video_dir(data_dir, video_id).join("artifacts"))
}

/// Writes pipeline progress into the job row.
struct JobProgress {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    job_id: String,
}

impl ProgressSink for JobProgress {
    fn report(&self, stage: Stage, progress: f64) {
        // completion is recorded together with the comments
        if stage == Stage::Done {
            return;
        }
        if let Err(e) = self
            .store
            .update_job(&self.job_id, stage, progress, self.clock.now())
        {
            tracing::warn!(job = %self.job_id, error = %e, "progress update failed");
        }
    }
}

/// Runs jobs one at a time per video, in submission order, with at most
/// `workers` jobs in flight overall.
pub struct JobRunner {
    store: Arc<Store>,
    pipeline: Arc<Pipeline>,
    data_dir: PathBuf,
    clock: Arc<dyn Clock>,
    permits: Arc<Semaphore>,
    queues: Mutex<HashMap<String, mpsc::UnboundedSender<String>>>,
    tasks: Mutex<Vec<AbortHandle>>,
}

impl JobRunner {
    pub fn new(
        store: Arc<Store>,
        pipeline: Arc<Pipeline>,
        data_dir: PathBuf,
        clock: Arc<dyn Clock>,
        workers: usize,
    ) -> Arc<Self> {
        Arc::new(Self {
            store,
            pipeline,
            data_dir,
            clock,
            permits: Arc::new(Semaphore::new(workers.max(1))),
            queues: Mutex::new(HashMap::new()),
            tasks: Mutex::new(Vec::new()),
        })
    }

    pub fn enqueue(self: &Arc<Self>, job: &Job) {
        let mut queues = self.queues.lock().expect("queue mutex poisoned");
        let tx = queues.entry(job.video_id.clone()).or_insert_with(|| {
            let (tx, rx) = mpsc::unbounded_channel();
            let handle = tokio::spawn(self.clone().drain(rx));
            self.tasks
                .lock()
                .expect("task mutex poisoned")
                .push(handle.abort_handle());
            tx
        });
        tx.send(job.job_id.clone())
            .expect("queue worker lives as long as the runner");
    }

    /// Re-enqueues every job left unfinished by a previous process.
    pub fn resume(self: &Arc<Self>) -> Result<usize> {
        let jobs = self.store.unfinished_jobs()?;
        for job in &jobs {
            tracing::info!(job = %job.job_id, stage = %job.stage, "resuming job");
            self.enqueue(job);
        }
        Ok(jobs.len())
    }

    /// Stops all workers immediately, as a crash would.
    pub fn abort_all(&self) {
        for t in self.tasks.lock().expect("task mutex poisoned").drain(..) {
            t.abort();
        }
        self.queues.lock().expect("queue mutex poisoned").clear();
    }

    async fn drain(self: Arc<Self>, mut rx: mpsc::UnboundedReceiver<String>) {
        while let Some(job_id) = rx.recv().await {
            let _permit = self
                .permits
                .clone()
                .acquire_owned()
                .await
                .expect("semaphore never closed");
            if let Err(e) = self.run(&job_id).await {
                tracing::error!(job = %job_id, error = %e, "job failed");
                if let Err(store_err) =
                    self.store
                        .fail_job(&job_id, &e.to_string(), self.clock.now())
                {
                    tracing::error!(job = %job_id, error = %store_err, "could not record job failure");
                }
            }
        }
    }

    async fn run(&self, job_id: &str) -> Result<()> {
        let job = self.store.job(job_id)?;
        if job.stage.is_terminal() {
            return Ok(());
        }
        let asset = self.store.video(&job.video_id)?.asset;
        let dir = artifact_dir(&self.data_dir, &job.video_id)?;
        let report = JobProgress {
            store: self.store.clone(),
            clock: self.clock.clone(),
            job_id: job_id.to_string(),
        };
        let (comments, ranking) = match job.kind {
            JobKind::Pipeline => {
                let out = self.pipeline.run(&asset, &dir, &report).await?;
                (out.comments, out.ranking)
            }
            JobKind::Generate => {
                report.report(Stage::GeneratingComments, 0.0);
                let (ctx, ranking) = load_context(&asset, &dir)?.ok_or_else(|| {
                    Error::Conflict(format!("video {} has no summary yet", asset.video_id))
                })?;
                let comments = self
                    .pipeline
                    .generate(&ctx, &ranking, job.count, job.batch_index)
                    .await
                    .map_err(|e| e.at_stage(Stage::GeneratingComments.as_str()))?;
                (comments, ranking)
            }
        };
        let personas: Vec<Persona> = self
            .pipeline
            .ranked_personas(&ranking)?
            .into_iter()
            .filter(|p| {
                comments
                    .iter()
                    .any(|c| c.persona_id.as_deref() == Some(p.persona_id.as_str()))
            })
            .collect();
        self.store
            .complete_job(job_id, &comments, &personas, self.clock.now())
    }
}
