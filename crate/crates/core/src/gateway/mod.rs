//! Protocols for the four external model kinds (speech transcription,
//! vision-language captioning, chat completion, text embedding) plus a
//! deterministic mock backend and an HTTP backend for each.

mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mock::{MockCaptioner, MockChat, MockEmbedder, MockTranscriber, ScriptedChat};
pub use remote::{RemoteCaptioner, RemoteChat, RemoteEmbedder, RemoteTranscriber};

pub const DEFAULT_CONTEXT_BUDGET: usize = 200_000;
pub const DEFAULT_MOCK_DIMENSION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub endpoint_url: Option<String>,
    /// Name of the environment variable that holds the bearer token.
    pub api_key_ref: Option<String>,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Token budget for chat backends.
    pub context_budget: Option<usize>,
    /// Largest encoded image accepted by a captioning backend.
    pub max_image_bytes: usize,
    /// Vector length produced by the mock embedder.
    pub dimension: usize,
    /// Base delay between retries; doubled on every attempt.
    pub backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint_url: None,
            api_key_ref: None,
            model_name: "mock".to_string(),
            timeout_secs: 60.0,
            max_retries: 3,
            context_budget: Some(DEFAULT_CONTEXT_BUDGET),
            max_image_bytes: 20 * 1024 * 1024,
            dimension: DEFAULT_MOCK_DIMENSION,
            backoff_ms: 250,
        }
    }
}

impl GatewayConfig {
    pub fn mock(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return Err(Error::Config(format!(
                "{kind} gateway: timeout must be positive"
            )));
        }
        if kind == ModelKind::Chat && !matches!(self.context_budget, Some(b) if b > 0) {
            return Err(Error::Config(
                "chat gateway: context_budget must be positive".into(),
            ));
        }
        if self.model_name.trim().is_empty() {
            return Err(Error::Config(format!(
                "{kind} gateway: model_name is empty"
            )));
        }
        match self.backend {
            BackendKind::Remote => {
                if self
                    .endpoint_url
                    .as_deref()
                    .is_none_or(|u| u.trim().is_empty())
                {
                    return Err(Error::Config(format!(
                        "{kind} gateway: remote backend needs endpoint_url"
                    )));
                }
            }
            BackendKind::Mock => {
                if kind == ModelKind::Embedding && self.dimension == 0 {
                    return Err(Error::Config("embedding dimension must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn budget(&self) -> usize {
        self.context_budget.unwrap_or(DEFAULT_CONTEXT_BUDGET)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Transcription,
    Captioning,
    Chat,
    Embedding,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Transcription => "transcription",
            ModelKind::Captioning => "captioning",
            ModelKind::Chat => "chat",
            ModelKind::Embedding => "embedding",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

impl TranscriptSegment {
    pub fn new(start: f64, end: f64, text: impl Into<String>) -> Self {
        Self {
            start,
            end,
            text: text.into(),
        }
    }
}

/// Validates backend output and puts it in canonical form: sorted by start,
/// with overlaps clipped so that each segment begins where the previous ended.
pub fn normalize_transcript(
    mut segments: Vec<TranscriptSegment>,
) -> Result<Vec<TranscriptSegment>> {
    for seg in &segments {
        if !seg.start.is_finite() || !seg.end.is_finite() || seg.start < 0.0 {
            return Err(Error::input(format!(
                "transcript segment has invalid bounds ({}, {})",
                seg.start, seg.end
            )));
        }
        if seg.start >= seg.end {
            return Err(Error::input(format!(
                "transcript segment starts at {} but ends at {}",
                seg.start, seg.end
            )));
        }
        if seg.text.trim().is_empty() {
            return Err(Error::input(format!(
                "transcript segment at {} has empty text",
                seg.start
            )));
        }
    }
    segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));

    let mut out: Vec<TranscriptSegment> = Vec::with_capacity(segments.len());
    for mut seg in segments {
        seg.text = seg.text.trim().to_string();
        if let Some(prev) = out.last() {
            if seg.start < prev.end {
                seg.start = prev.end;
            }
            if seg.start >= seg.end {
                // fully covered by the previous segment
                continue;
            }
        }
        out.push(seg);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("embedding vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("embedding vector has non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_instruction: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatExchange {
    pub fn single(system: impl Into<String>, user: impl Into<String>, temperature: f64) -> Self {
        Self {
            system_instruction: system.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: user.into(),
            }],
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::input("chat exchange has no messages"));
        }
        for (i, msg) in self.messages.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            if msg.role != expected {
                return Err(Error::input(format!(
                    "chat message {i} should be from {expected:?}"
                )));
            }
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::input(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Total characters the backend will see.
    pub fn rendered_chars(&self) -> usize {
        self.system_instruction.chars().count()
            + self
                .messages
                .iter()
                .map(|m| m.content.chars().count())
                .sum::<usize>()
    }

    pub fn estimated_tokens(&self) -> usize {
        tokens_for_chars(self.rendered_chars())
    }
}

/// Characters-divided-by-four heuristic, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    tokens_for_chars(text.chars().count())
}

fn tokens_for_chars(chars: usize) -> usize {
    chars.div_ceil(4)
}

pub fn check_budget(exchange: &ChatExchange, budget: usize) -> Result<()> {
    let estimated = exchange.estimated_tokens();
    if estimated > budget {
        return Err(Error::Budget {
            estimated,
            budget,
            overflow: estimated - budget,
        });
    }
    Ok(())
}

/// Encoded audio handed to a transcription backend (16-bit PCM WAV).
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub wav_bytes: Vec<u8>,
    pub duration: f64,
}

/// Encoded image handed to a captioning backend.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    pub bytes: Vec<u8>,
    pub mime: &'static str,
}

/// Per-backend attempt counters. Remote backends count every HTTP attempt,
/// mocks count every call.
#[derive(Debug, Default)]
pub struct CallLog {
    transcribe: AtomicU64,
    caption: AtomicU64,
    complete: AtomicU64,
    embed: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CallCounts {
    pub transcribe: u64,
    pub caption: u64,
    pub complete: u64,
    pub embed: u64,
}

impl CallLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn record(&self, kind: ModelKind) {
        let counter = match kind {
            ModelKind::Transcription => &self.transcribe,
            ModelKind::Captioning => &self.caption,
            ModelKind::Chat => &self.complete,
            ModelKind::Embedding => &self.embed,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            transcribe: self.transcribe.load(Ordering::Relaxed),
            caption: self.caption.load(Ordering::Relaxed),
            complete: self.complete.load(Ordering::Relaxed),
            embed: self.embed.load(Ordering::Relaxed),
        }
    }
}

#[async_trait]
pub trait Transcriber: Send + Sync {
    fn model_name(&self) -> &str;

    /// Returns a normalized transcript; an empty list for silent audio.
    async fn transcribe(&self, audio: &AudioClip) -> Result<Vec<TranscriptSegment>>;
}

#[async_trait]
pub trait Captioner: Send + Sync {
    fn model_name(&self) -> &str;

    async fn caption(
        &self,
        panel: &EncodedImage,
        dialogue: &str,
        instruction: &str,
    ) -> Result<String>;
}

#[async_trait]
pub trait ChatModel: Send + Sync {
    fn model_name(&self) -> &str;

    fn context_budget(&self) -> usize;

    async fn complete(&self, exchange: &ChatExchange) -> Result<String>;
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn model_name(&self) -> &str;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Dialogue as shown to a captioning backend; silent stretches read "none".
pub fn dialogue_field(dialogue: &str) -> &str {
    let trimmed = dialogue.trim();
    if trimmed.is_empty() {
        "none"
    } else {
        trimmed
    }
}

pub(crate) fn validate_caption_request(
    panel: &EncodedImage,
    instruction: &str,
    max_image_bytes: usize,
) -> Result<()> {
    if instruction.trim().is_empty() {
        return Err(Error::input("caption instruction is empty"));
    }
    if panel.bytes.is_empty() {
        return Err(Error::input("panel image is empty"));
    }
    if panel.bytes.len() > max_image_bytes {
        return Err(Error::input(format!(
            "panel image is {} bytes, backend limit is {}",
            panel.bytes.len(),
            max_image_bytes
        )));
    }
    Ok(())
}

pub(crate) fn validate_embed_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::input("cannot embed empty text"));
    }
    Ok(())
}

/// All four backends for one pipeline run.
#[derive(Clone)]
pub struct Gateways {
    pub transcriber: Arc<dyn Transcriber>,
    pub captioner: Arc<dyn Captioner>,
    pub chat: Arc<dyn ChatModel>,
    pub embedder: Arc<dyn Embedder>,
}

impl Gateways {
    /// Deterministic offline backends sharing one call log.
    pub fn mock(log: Arc<CallLog>) -> Self {
        Self {
            transcriber: Arc::new(MockTranscriber::new(log.clone())),
            captioner: Arc::new(MockCaptioner::new(log.clone())),
            chat: Arc::new(MockChat::new(log.clone())),
            embedder: Arc::new(MockEmbedder::new(DEFAULT_MOCK_DIMENSION, log)),
        }
    }
}

pub fn build_transcriber(
    config: &GatewayConfig,
    log: Arc<CallLog>,
) -> Result<Arc<dyn Transcriber>> {
    config.validate(ModelKind::Transcription)?;
    Ok(match config.backend {
        BackendKind::Mock => Arc::new(MockTranscriber::new(log).named(&config.model_name)),
        BackendKind::Remote => Arc::new(RemoteTranscriber::new(config.clone(), log)?),
    })
}

pub fn build_captioner(config: &GatewayConfig, log: Arc<CallLog>) -> Result<Arc<dyn Captioner>> {
    config.validate(ModelKind::Captioning)?;
    Ok(match config.backend {
        BackendKind::Mock => Arc::new(
            MockCaptioner::new(log)
                .named(&config.model_name)
                .with_max_image_bytes(config.max_image_bytes),
        ),
        BackendKind::Remote => Arc::new(RemoteCaptioner::new(config.clone(), log)?),
    })
}

pub fn build_chat(config: &GatewayConfig, log: Arc<CallLog>) -> Result<Arc<dyn ChatModel>> {
    config.validate(ModelKind::Chat)?;
    Ok(match config.backend {
        BackendKind::Mock => Arc::new(
            MockChat::new(log)
                .named(&config.model_name)
                .with_budget(config.budget()),
        ),
        BackendKind::Remote => Arc::new(RemoteChat::new(config.clone(), log)?),
    })
}

pub fn build_embedder(config: &GatewayConfig, log: Arc<CallLog>) -> Result<Arc<dyn Embedder>> {
    config.validate(ModelKind::Embedding)?;
    Ok(match config.backend {
        BackendKind::Mock => {
            Arc::new(MockEmbedder::new(config.dimension, log).named(&config.model_name))
        }
        BackendKind::Remote => Arc::new(RemoteEmbedder::new(config.clone(), log)?),
    })
}
