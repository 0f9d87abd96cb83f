//! HTTP service: uploads, background jobs, comment threads.

mod api;
mod jobs;
mod store;

pub use api::{router, AppState, VideoView, MAX_GENERATE_COUNT, TOKEN_HEADER};
pub use jobs::{artifact_dir, video_dir, JobRunner};
pub use store::{Job, JobKind, Store, VideoRecord};

use std::path::PathBuf;
use std::sync::Arc;

use reelcrowd_core::clock::Clock;
use reelcrowd_core::config::AppConfig;
use reelcrowd_core::gateway::Gateways;
use reelcrowd_core::persona::PersonaIndex;
use reelcrowd_core::pipeline::{Pipeline, PipelineSettings};
use reelcrowd_core::{Error, Result};

pub struct ServiceOptions {
    pub config: AppConfig,
    pub data_dir: PathBuf,
    pub gateways: Gateways,
    /// Without an index comments are generated without personas.
    pub index: Option<Arc<PersonaIndex>>,
    pub clock: Arc<dyn Clock>,
}

pub struct Service {
    state: AppState,
    static_dir: Option<PathBuf>,
    max_upload_bytes: usize,
}

impl Service {
    /// Opens the store under `data_dir` and resumes unfinished jobs.
    /// Must be called inside a Tokio runtime.
    pub fn start(options: ServiceOptions) -> Result<Self> {
        let ServiceOptions {
            config,
            data_dir,
            gateways,
            index,
            clock,
        } = options;
        config.validate()?;
        std::fs::create_dir_all(&data_dir)?;
        let store = Arc::new(Store::open(&data_dir.join("reelcrowd.db"))?);
        if index.is_none() {
            tracing::warn!("no persona index configured; comments will carry no persona");
        }
        let engine = config.build_engine(gateways.chat.clone(), clock.clone())?;
        let settings = PipelineSettings::from_config(&config, index.is_none());
        let pipeline = Arc::new(Pipeline::new(
            gateways,
            engine,
            index,
            clock.clone(),
            settings,
        )?);
        let runner = JobRunner::new(
            store.clone(),
            pipeline.clone(),
            data_dir.clone(),
            clock.clone(),
            config.service.workers,
        );
        let resumed = runner.resume()?;
        if resumed > 0 {
            tracing::info!(resumed, "resumed unfinished jobs");
        }
        let api_token = match &config.service.api_token_ref {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self {
            state: AppState {
                store,
                runner,
                pipeline,
                data_dir,
                clock,
                api_token,
                batch_size: config.generation.batch_size,
            },
            static_dir: config.service.static_dir.clone(),
            max_upload_bytes: config.service.max_upload_bytes,
        })
    }

    pub fn router(&self) -> axum::Router {
        router(
            self.state.clone(),
            self.static_dir.clone(),
            self.max_upload_bytes,
        )
    }

    pub fn store(&self) -> &Store {
        &self.state.store
    }

    /// Aborts every running job without marking it, leaving it to be
    /// resumed by the next start.
    pub fn abort_jobs(&self) {
        self.state.runner.abort_all();
    }

    pub async fn serve(self, listener: tokio::net::TcpListener) -> Result<()> {
        let app = self.router();
        axum::serve(listener, app).await.map_err(Error::Io)
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.state.runner.abort_all();
    }
}
