//! HTTP backends. Each kind POSTs one JSON document to its `endpoint_url`
//! with an optional bearer token; the payload shapes are described in
//! `docs/gateway-protocol.md`.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    check_budget, dialogue_field, normalize_transcript, validate_caption_request,
    validate_embed_text, AudioClip, CallLog, Captioner, ChatExchange, ChatMessage, ChatModel,
    Embedder, EmbeddingVector, EncodedImage, GatewayConfig, ModelKind, Transcriber,
    TranscriptSegment,
};
use crate::error::{Error, Result};

const MAX_BACKOFF: Duration = Duration::from_secs(10);

/// Bearer token read from the environment. Never printed.
#[derive(Clone)]
struct Secret(String);

impl std::fmt::Debug for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Secret(***)")
    }
}

struct HttpClient {
    kind: ModelKind,
    config: GatewayConfig,
    endpoint: String,
    secret: Option<Secret>,
    client: reqwest::Client,
    log: Arc<CallLog>,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl HttpClient {
    fn new(kind: ModelKind, config: GatewayConfig, log: Arc<CallLog>) -> Result<Self> {
        config.validate(kind)?;
        let secret = match config.api_key_ref.as_deref() {
            Some(var) => Some(Secret(std::env::var(var).map_err(|_| {
                Error::Config(format!(
                    "{kind} gateway: environment variable {var} is not set"
                ))
            })?)),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| Error::Config(format!("{kind} gateway: {e}")))?;
        Ok(Self {
            kind,
            endpoint: config.endpoint_url.clone().unwrap_or_default(),
            config,
            secret,
            client,
            log,
        })
    }

    fn redact(&self, message: String) -> String {
        match &self.secret {
            Some(Secret(s)) if !s.is_empty() => message.replace(s.as_str(), "***"),
            _ => message,
        }
    }

    async fn post<Req: Serialize + Sync, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Resp> {
        let attempts_allowed = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts_allowed {
            self.log.record(self.kind);
            tracing::debug!(kind = %self.kind, attempt, endpoint = %self.endpoint, "gateway request");
            match self.try_once(body).await {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    let msg = self.redact(msg);
                    tracing::warn!(kind = %self.kind, attempt, error = %msg, "gateway attempt failed");
                    last = msg;
                    if attempt < attempts_allowed {
                        let factor = 1u64 << (attempt - 1).min(16);
                        let delay =
                            Duration::from_millis(self.config.backoff_ms.saturating_mul(factor));
                        tokio::time::sleep(delay.min(MAX_BACKOFF)).await;
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts: attempts_allowed,
            message: last,
        })
    }

    async fn try_once<Req: Serialize + Sync, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> std::result::Result<Resp, Attempt> {
        let mut request = self.client.post(&self.endpoint).json(body);
        if let Some(Secret(token)) = &self.secret {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .await
            .map_err(|e| Attempt::Retry(format!("request failed: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| Attempt::Retry(format!("reading body failed: {e}")))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("backend returned {status}")));
        }
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(Attempt::Fatal(Error::input(self.redact(format!(
                "{} backend rejected request ({status}): {snippet}",
                self.kind
            )))));
        }
        serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(Error::Parse {
                message: format!("{} backend response: {e}", self.kind),
                raw: self.redact(text),
            })
        })
    }
}

#[derive(Serialize)]
struct TranscribeRequest<'a> {
    model: &'a str,
    audio_base64: String,
    mime: &'a str,
}

#[derive(Deserialize)]
struct TranscribeResponse {
    segments: Vec<TranscriptSegment>,
}

pub struct RemoteTranscriber {
    http: HttpClient,
}

impl RemoteTranscriber {
    pub fn new(config: GatewayConfig, log: Arc<CallLog>) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(ModelKind::Transcription, config, log)?,
        })
    }
}

#[async_trait]
impl Transcriber for RemoteTranscriber {
    fn model_name(&self) -> &str {
        &self.http.config.model_name
    }

    async fn transcribe(&self, audio: &AudioClip) -> Result<Vec<TranscriptSegment>> {
        if audio.wav_bytes.is_empty() {
            return Err(Error::input("audio clip is empty"));
        }
        let resp: TranscribeResponse = self
            .http
            .post(&TranscribeRequest {
                model: &self.http.config.model_name,
                audio_base64: base64::engine::general_purpose::STANDARD.encode(&audio.wav_bytes),
                mime: "audio/wav",
            })
            .await?;
        normalize_transcript(resp.segments)
    }
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    model: &'a str,
    instruction: &'a str,
    dialogue: &'a str,
    image_base64: String,
    image_mime: &'a str,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

pub struct RemoteCaptioner {
    http: HttpClient,
}

impl RemoteCaptioner {
    pub fn new(config: GatewayConfig, log: Arc<CallLog>) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(ModelKind::Captioning, config, log)?,
        })
    }
}

#[async_trait]
impl Captioner for RemoteCaptioner {
    fn model_name(&self) -> &str {
        &self.http.config.model_name
    }

    async fn caption(
        &self,
        panel: &EncodedImage,
        dialogue: &str,
        instruction: &str,
    ) -> Result<String> {
        validate_caption_request(panel, instruction, self.http.config.max_image_bytes)?;
        let resp: TextResponse = self
            .http
            .post(&CaptionRequest {
                model: &self.http.config.model_name,
                instruction,
                dialogue: dialogue_field(dialogue),
                image_base64: base64::engine::general_purpose::STANDARD.encode(&panel.bytes),
                image_mime: panel.mime,
            })
            .await?;
        nonempty(resp.text, "caption")
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    system: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    text: String,
    #[serde(default)]
    prompt_tokens: Option<usize>,
}

pub struct RemoteChat {
    http: HttpClient,
}

impl RemoteChat {
    pub fn new(config: GatewayConfig, log: Arc<CallLog>) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(ModelKind::Chat, config, log)?,
        })
    }
}

#[async_trait]
impl ChatModel for RemoteChat {
    fn model_name(&self) -> &str {
        &self.http.config.model_name
    }

    fn context_budget(&self) -> usize {
        self.http.config.budget()
    }

    async fn complete(&self, exchange: &ChatExchange) -> Result<String> {
        exchange.validate()?;
        check_budget(exchange, self.context_budget())?;
        let resp: ChatResponse = self
            .http
            .post(&ChatRequest {
                model: &self.http.config.model_name,
                system: &exchange.system_instruction,
                messages: &exchange.messages,
                temperature: exchange.temperature,
            })
            .await?;
        if let Some(tokens) = resp.prompt_tokens {
            tracing::debug!(
                estimated = exchange.estimated_tokens(),
                reported = tokens,
                "chat prompt size"
            );
        }
        nonempty(resp.text, "completion")
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

pub struct RemoteEmbedder {
    http: HttpClient,
}

impl RemoteEmbedder {
    pub fn new(config: GatewayConfig, log: Arc<CallLog>) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(ModelKind::Embedding, config, log)?,
        })
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn model_name(&self) -> &str {
        &self.http.config.model_name
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        validate_embed_text(text)?;
        let resp: EmbedResponse = self
            .http
            .post(&EmbedRequest {
                model: &self.http.config.model_name,
                input: text,
            })
            .await?;
        EmbeddingVector::new(resp.embedding)
    }
}

fn nonempty(text: String, what: &str) -> Result<String> {
    if text.trim().is_empty() {
        Err(Error::Parse {
            message: format!("backend returned an empty {what}"),
            raw: text,
        })
    } else {
        Ok(text)
    }
}
