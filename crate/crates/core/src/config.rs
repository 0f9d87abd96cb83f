use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::comments::{CommentEngine, GenerationSettings, IdentityPool, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::gateway::{
    build_captioner, build_chat, build_embedder, build_transcriber, BackendKind, CallLog,
    ChatModel, GatewayConfig, Gateways,
};
use crate::persona::{RankingOptions, DEFAULT_MIN_SCORE, DEFAULT_TOP_K};
use crate::video::{
    FrameSampling, DEFAULT_FRAME_MAX_WIDTH, DEFAULT_MAX_DURATION_SECS, DEFAULT_SAMPLE_RATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySet {
    pub transcription: GatewayConfig,
    pub captioning: GatewayConfig,
    pub chat: GatewayConfig,
    pub embedding: GatewayConfig,
    /// Relevance judges used by evaluation; empty disables the judge metric.
    pub judges: Vec<GatewayConfig>,
}

impl Default for GatewaySet {
    fn default() -> Self {
        Self {
            transcription: GatewayConfig::mock("mock-transcriber"),
            captioning: GatewayConfig::mock("mock-captioner"),
            chat: GatewayConfig::mock("mock-chat"),
            embedding: GatewayConfig::mock("mock-embedder"),
            judges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSettings {
    pub sample_rate: f64,
    pub max_width: u32,
    pub max_duration_secs: f64,
    pub caption_parallelism: usize,
}

impl Default for VideoSettings {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            max_width: DEFAULT_FRAME_MAX_WIDTH,
            max_duration_secs: DEFAULT_MAX_DURATION_SECS,
            caption_parallelism: 4,
        }
    }
}

impl VideoSettings {
    pub fn sampling(&self) -> FrameSampling {
        FrameSampling {
            sample_rate: self.sample_rate,
            max_width: self.max_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaSettings {
    /// Source persona file, one persona per line or JSON lines.
    pub file: Option<PathBuf>,
    /// Where the embedded index lives; built from `file` when missing.
    pub index: Option<PathBuf>,
    pub top_k: usize,
    pub min_score: Option<f64>,
}

impl Default for PersonaSettings {
    fn default() -> Self {
        Self {
            file: None,
            index: None,
            top_k: DEFAULT_TOP_K,
            min_score: Some(DEFAULT_MIN_SCORE),
        }
    }
}

impl PersonaSettings {
    pub fn ranking(&self) -> RankingOptions {
        RankingOptions {
            top_k: self.top_k,
            min_score: self.min_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub parallelism: usize,
    /// Replaces the bundled commenter names.
    pub names_file: Option<PathBuf>,
    /// Replaces the bundled example comments, one per line.
    pub fewshot_file: Option<PathBuf>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            temperature: 1.0,
            parallelism: 4,
            names_file: None,
            fewshot_file: None,
        }
    }
}

impl GenerationConfig {
    pub fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            temperature: self.temperature,
            parallelism: self.parallelism,
        }
    }
}

/// Share of overall job progress given to each stage. Captioning advances
/// per panel inside its share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgressWeights {
    pub transcribing: f64,
    pub captioning: f64,
    pub summarizing: f64,
    pub ranking_personas: f64,
    pub generating_comments: f64,
}

impl Default for ProgressWeights {
    fn default() -> Self {
        Self {
            transcribing: 0.10,
            captioning: 0.50,
            summarizing: 0.10,
            ranking_personas: 0.05,
            generating_comments: 0.25,
        }
    }
}

impl ProgressWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.transcribing,
            self.captioning,
            self.summarizing,
            self.ranking_personas,
            self.generating_comments,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "progress weights must be non-negative".into(),
            ));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("progress weights must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Jobs running at once across all videos.
    pub workers: usize,
    pub static_dir: Option<PathBuf>,
    /// Name of the environment variable holding the shared API token.
    /// When set, mutating routes require a matching `x-api-token` header.
    pub api_token_ref: Option<String>,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            workers: 2,
            static_dir: None,
            api_token_ref: None,
            max_upload_bytes: 2 * 1024 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub gateways: GatewaySet,
    pub video: VideoSettings,
    pub persona: PersonaSettings,
    pub generation: GenerationConfig,
    pub progress: ProgressWeights,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: AppConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.persona.file);
        fix(&mut self.persona.index);
        fix(&mut self.generation.names_file);
        fix(&mut self.generation.fewshot_file);
        fix(&mut self.service.static_dir);
    }

    /// Switches every gateway to its offline mock.
    pub fn force_mock(&mut self) {
        let set = &mut self.gateways;
        for g in [
            &mut set.transcription,
            &mut set.captioning,
            &mut set.chat,
            &mut set.embedding,
        ]
        .into_iter()
        .chain(set.judges.iter_mut())
        {
            g.backend = BackendKind::Mock;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.video;
        if !(v.sample_rate > 0.0 && v.sample_rate.is_finite()) {
            return Err(Error::Config("video.sample_rate must be positive".into()));
        }
        if v.max_width == 0
            || v.max_duration_secs.is_nan()
            || v.max_duration_secs <= 0.0
            || v.caption_parallelism == 0
        {
            return Err(Error::Config("video settings must be positive".into()));
        }
        if self.persona.top_k == 0 {
            return Err(Error::Config("persona.top_k must be positive".into()));
        }
        let g = &self.generation;
        if g.batch_size == 0 || g.parallelism == 0 {
            return Err(Error::Config(
                "generation batch_size and parallelism must be positive".into(),
            ));
        }
        if !(0.0..=2.0).contains(&g.temperature) {
            return Err(Error::Config(
                "generation.temperature must be within [0, 2]".into(),
            ));
        }
        if self.service.workers == 0 {
            return Err(Error::Config("service.workers must be positive".into()));
        }
        self.progress.validate()
    }

    pub fn build_gateways(&self, log: Arc<CallLog>) -> Result<Gateways> {
        let g = &self.gateways;
        Ok(Gateways {
            transcriber: build_transcriber(&g.transcription, log.clone())?,
            captioner: build_captioner(&g.captioning, log.clone())?,
            chat: build_chat(&g.chat, log.clone())?,
            embedder: build_embedder(&g.embedding, log)?,
        })
    }

    pub fn build_judges(&self, log: Arc<CallLog>) -> Result<Vec<Arc<dyn ChatModel>>> {
        self.gateways
            .judges
            .iter()
            .map(|j| build_chat(j, log.clone()))
            .collect()
    }

    /// Comment engine with the configured names, examples and sampling.
    pub fn build_engine(
        &self,
        chat: Arc<dyn ChatModel>,
        clock: Arc<dyn Clock>,
    ) -> Result<CommentEngine> {
        let g = &self.generation;
        let identities = match &g.names_file {
            Some(path) => IdentityPool::load(path, self.seed)?,
            None => IdentityPool::builtin(self.seed),
        };
        let mut engine =
            CommentEngine::new(chat, Arc::new(identities), clock).with_settings(g.settings());
        if let Some(path) = &g.fewshot_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            engine = engine.with_fewshot(text.lines().map(str::to_string).collect())?;
        }
        Ok(engine)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = AppConfig::default();
        c.validate().unwrap();
        assert_eq!(AppConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_file() {
        let c = AppConfig::parse(
            r#"
seed = 7
[gateways.chat]
backend = "remote"
endpoint_url = "http://localhost:9000/chat"
api_key_ref = "CHAT_KEY"
model_name = "big-model"
[[gateways.judges]]
model_name = "judge-one"
[persona]
top_k = 10
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.gateways.chat.backend, BackendKind::Remote);
        assert_eq!(c.gateways.judges.len(), 1);
        assert_eq!(c.persona.top_k, 10);
        assert_eq!(c.generation.batch_size, 30);
        let mut m = c.clone();
        m.force_mock();
        assert_eq!(m.gateways.chat.backend, BackendKind::Mock);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(AppConfig::parse("[progress]\ncaptioning = 0.9").is_err());
        assert!(AppConfig::parse("[generation]\ntemperature = 3.0").is_err());
        assert!(AppConfig::parse("unknown_key = 1").is_err());
        assert!(AppConfig::parse("[gateways.chat]\nbackend = \"remote\"")
            .unwrap()
            .build_gateways(CallLog::new())
            .is_err());
    }
}
