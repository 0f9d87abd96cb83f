//! Offline backends. Every output is a pure function of the request, so the
//! same inputs give byte-identical results across runs and machines.
//!
//! Contracts:
//! - transcription: silent or empty audio gives no segments, otherwise one
//!   segment `{0, D, "mock transcript <h>"}` where `h` is the short SHA-256 of
//!   the WAV bytes and `D` the clip duration.
//! - captioning: `"mock caption for panel <h> with dialogue <w>"` where `h`
//!   is the short SHA-256 of the encoded image and `w` the first eight
//!   dialogue words (or `none`).
//! - chat: keyed by the tag found in the last user message, see [`tags`].
//! - embedding: ChaCha8 seeded with the text's SHA-256, standard normal
//!   components, scaled to unit length.

use std::collections::VecDeque;
use std::io::Cursor;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    check_budget, dialogue_field, validate_caption_request, validate_embed_text, AudioClip,
    CallLog, Captioner, ChatExchange, ChatModel, Embedder, EmbeddingVector, EncodedImage,
    ModelKind, Transcriber, TranscriptSegment, DEFAULT_CONTEXT_BUDGET,
};
use crate::error::{Error, Result};
use crate::hashing::{seed_from, short_hash};
use crate::prompt::{fields, tags};

pub struct MockTranscriber {
    name: String,
    log: Arc<CallLog>,
}

impl MockTranscriber {
    pub fn new(log: Arc<CallLog>) -> Self {
        Self {
            name: "mock-transcriber".into(),
            log,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

#[async_trait]
impl Transcriber for MockTranscriber {
    fn model_name(&self) -> &str {
        &self.name
    }

    async fn transcribe(&self, audio: &AudioClip) -> Result<Vec<TranscriptSegment>> {
        self.log.record(ModelKind::Transcription);
        let reader = hound::WavReader::new(Cursor::new(&audio.wav_bytes))
            .map_err(|e| Error::input(format!("audio is not decodable WAV: {e}")))?;
        let spec = reader.spec();
        let total = reader.len() as usize;
        let silent = match spec.sample_format {
            hound::SampleFormat::Int => {
                let mut samples = reader.into_samples::<i32>();
                samples.try_fold(true, |acc, s| {
                    s.map(|v| acc && v == 0)
                        .map_err(|e| Error::input(format!("audio is not decodable WAV: {e}")))
                })?
            }
            hound::SampleFormat::Float => {
                let mut samples = reader.into_samples::<f32>();
                samples.try_fold(true, |acc, s| {
                    s.map(|v| acc && v == 0.0)
                        .map_err(|e| Error::input(format!("audio is not decodable WAV: {e}")))
                })?
            }
        };
        let frames = total / spec.channels.max(1) as usize;
        let duration = frames as f64 / spec.sample_rate as f64;
        if silent || duration <= 0.0 {
            return Ok(Vec::new());
        }
        Ok(vec![TranscriptSegment::new(
            0.0,
            duration,
            format!("mock transcript {}", short_hash(&audio.wav_bytes)),
        )])
    }
}

pub struct MockCaptioner {
    name: String,
    log: Arc<CallLog>,
    max_image_bytes: usize,
    jitter_ms: u64,
}

impl MockCaptioner {
    pub fn new(log: Arc<CallLog>) -> Self {
        Self {
            name: "mock-captioner".into(),
            log,
            max_image_bytes: 20 * 1024 * 1024,
            jitter_ms: 0,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn with_max_image_bytes(mut self, limit: usize) -> Self {
        self.max_image_bytes = limit;
        self
    }

    /// Delay each call by a hash-derived amount below `max_ms`, so concurrent
    /// calls finish out of submission order.
    pub fn with_jitter(mut self, max_ms: u64) -> Self {
        self.jitter_ms = max_ms;
        self
    }

    pub fn expected_caption(panel: &EncodedImage, dialogue: &str) -> String {
        let words: Vec<&str> = dialogue_field(dialogue)
            .split_whitespace()
            .take(8)
            .collect();
        format!(
            "mock caption for panel {} with dialogue {}",
            short_hash(&panel.bytes),
            words.join(" ")
        )
    }
}

#[async_trait]
impl Captioner for MockCaptioner {
    fn model_name(&self) -> &str {
        &self.name
    }

    async fn caption(
        &self,
        panel: &EncodedImage,
        dialogue: &str,
        instruction: &str,
    ) -> Result<String> {
        self.log.record(ModelKind::Captioning);
        validate_caption_request(panel, instruction, self.max_image_bytes)?;
        if self.jitter_ms > 0 {
            let delay = seed_from(&panel.bytes) % self.jitter_ms;
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
        Ok(Self::expected_caption(panel, dialogue))
    }
}

/// Scripted chat backend keyed by prompt tags.
pub struct MockChat {
    name: String,
    log: Arc<CallLog>,
    budget: usize,
}

impl MockChat {
    pub fn new(log: Arc<CallLog>) -> Self {
        Self {
            name: "mock-chat".into(),
            log,
            budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    /// The reply this backend gives for a prompt; exposed for tests.
    pub fn respond(prompt: &str) -> String {
        let seed = seed_from(prompt.as_bytes());
        if prompt.contains(tags::SUMMARIZE) {
            mock_summary(prompt, seed)
        } else if prompt.contains(tags::JUDGE) {
            (seed % 101).to_string()
        } else if prompt.contains(tags::REPLY) {
            mock_reply(prompt, seed)
        } else if prompt.contains(tags::THREAD) {
            mock_thread(prompt, seed)
        } else if prompt.contains(tags::COMMENT) {
            mock_comment(prompt, seed)
        } else {
            format!("mock completion {:016x}", seed)
        }
    }
}

#[async_trait]
impl ChatModel for MockChat {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn context_budget(&self) -> usize {
        self.budget
    }

    async fn complete(&self, exchange: &ChatExchange) -> Result<String> {
        exchange.validate()?;
        check_budget(exchange, self.budget)?;
        self.log.record(ModelKind::Chat);
        let prompt = exchange.last_user_message().unwrap_or_default();
        Ok(Self::respond(prompt))
    }
}

/// Replays a fixed list of replies in order and records every exchange.
pub struct ScriptedChat {
    name: String,
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatExchange>>,
    budget: usize,
}

impl ScriptedChat {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: "scripted-chat".into(),
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
            budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.seen.lock().unwrap().clone()
    }
}

#[async_trait]
impl ChatModel for ScriptedChat {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn context_budget(&self) -> usize {
        self.budget
    }

    async fn complete(&self, exchange: &ChatExchange) -> Result<String> {
        exchange.validate()?;
        check_budget(exchange, self.budget)?;
        self.seen.lock().unwrap().push(exchange.clone());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| Error::Generation("scripted chat has no replies left".into()))
    }
}

pub struct MockEmbedder {
    name: String,
    dimension: usize,
    log: Arc<CallLog>,
}

impl MockEmbedder {
    pub fn new(dimension: usize, log: Arc<CallLog>) -> Self {
        Self {
            name: "mock-embedder".into(),
            dimension,
            log,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn vector_for(text: &str, dimension: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(text.as_bytes()));
        let mut values: Vec<f64> = (0..dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        values
    }
}

#[async_trait]
impl Embedder for MockEmbedder {
    fn model_name(&self) -> &str {
        &self.name
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.log.record(ModelKind::Embedding);
        validate_embed_text(text)?;
        EmbeddingVector::new(Self::vector_for(text, self.dimension))
    }
}

fn field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|line| line.strip_prefix(label))
        .map(str::trim)
        .filter(|v| !v.is_empty())
}

const STOPWORDS: &[&str] = &[
    "about", "after", "again", "also", "been", "before", "being", "from", "have", "here", "into",
    "just", "like", "more", "most", "only", "over", "some", "than", "that", "their", "them",
    "then", "there", "these", "they", "this", "those", "through", "very", "what", "when", "where",
    "which", "while", "with", "your", "none",
];

const FILLER_KEYWORDS: &[&str] = &["video", "creator", "highlights", "walkthrough", "audience"];

fn mock_keywords(prompt: &str) -> Vec<String> {
    let mut keywords: Vec<String> = Vec::new();
    for source in [fields::TITLE, fields::DESCRIPTION] {
        let Some(text) = field(prompt, source) else {
            continue;
        };
        for word in text.split(|c: char| !c.is_alphanumeric()) {
            let word = word.to_lowercase();
            if word.chars().count() >= 4
                && !STOPWORDS.contains(&word.as_str())
                && !keywords.contains(&word)
            {
                keywords.push(word);
            }
        }
    }
    keywords.truncate(8);
    for filler in FILLER_KEYWORDS {
        if keywords.len() >= 5 {
            break;
        }
        if !keywords.iter().any(|k| k == filler) {
            keywords.push(filler.to_string());
        }
    }
    keywords
}

fn mock_summary(prompt: &str, seed: u64) -> String {
    let title = field(prompt, fields::TITLE).unwrap_or("untitled");
    let author = field(prompt, fields::AUTHOR).unwrap_or("an unknown creator");
    let captions = prompt.matches(fields::CAPTION_MARK).count();
    let speech = prompt.matches(fields::SPEECH_MARK).count();
    let narration = if speech == 0 {
        "without narration".to_string()
    } else {
        format!("with {speech} narrated passage(s)")
    };
    format!(
        "SUMMARY:\nA video titled \"{title}\" by {author}. It moves through {captions} captioned scene(s) {narration}. Digest {seed:016x}.\nKEYWORDS:\n{}",
        mock_keywords(prompt).join(", ")
    )
}

const OPENERS: &[&str] = &[
    "Honestly,",
    "Wow,",
    "Okay so",
    "Not gonna lie,",
    "As someone new to this channel,",
    "Great upload!",
    "Hmm,",
    "Love this.",
    "First time watching and",
    "Quick thought:",
];

const MIDDLES: &[&str] = &[
    "the part about {kw} really stood out to me.",
    "I did not expect {kw} to be handled like this.",
    "could you do a longer follow-up on {kw}?",
    "{kw} is exactly why I keep coming back.",
    "I learned more about {kw} here than anywhere else.",
    "the way you explained {kw} made it click for me.",
    "I wish the {kw} section had a bit more detail.",
    "{kw} at this quality is rare, keep it up.",
];

const CLOSERS: &[&str] = &[
    "Subscribed.",
    "Can't wait for the next one!",
    "Saving this for later.",
    "",
    "Sharing with my friends.",
    "Thanks for making this.",
];

fn pick<'a>(items: &'a [&'a str], seed: u64, salt: u64) -> &'a str {
    let mixed = seed.rotate_left((salt * 13) as u32) ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    items[(mixed % items.len() as u64) as usize]
}

fn pick_keyword(prompt: &str, seed: u64) -> String {
    let keywords: Vec<&str> = field(prompt, fields::KEYWORDS)
        .map(|k| {
            k.split(',')
                .map(str::trim)
                .filter(|k| !k.is_empty())
                .collect()
        })
        .unwrap_or_default();
    if keywords.is_empty() {
        "this".to_string()
    } else {
        keywords[(seed % keywords.len() as u64) as usize].to_string()
    }
}

fn persona_hint(prompt: &str) -> Option<String> {
    let persona = field(prompt, fields::PERSONA)?;
    let first = persona.split('.').map(str::trim).find(|s| !s.is_empty())?;
    Some(format!(
        "Speaking as someone who says \"{first}\", this hit home."
    ))
}

fn mock_comment(prompt: &str, seed: u64) -> String {
    let kw = pick_keyword(prompt, seed);
    let mut parts = vec![
        pick(OPENERS, seed, 1).to_string(),
        pick(MIDDLES, seed, 2).replace("{kw}", &kw),
    ];
    if let Some(hint) = persona_hint(prompt) {
        parts.push(hint);
    }
    parts.push(pick(CLOSERS, seed, 3).to_string());
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

fn mock_thread(prompt: &str, seed: u64) -> String {
    let kw = pick_keyword(prompt, seed);
    let agree = [
        "Totally agree,",
        "I see it differently,",
        "Same here,",
        "Good point,",
    ];
    let mut body = format!(
        "{} {}",
        pick(&agree, seed, 4),
        pick(MIDDLES, seed, 5).replace("{kw}", &kw)
    );
    if let Some(hint) = persona_hint(prompt) {
        body.push(' ');
        body.push_str(&hint);
    }
    body
}

fn mock_reply(prompt: &str, seed: u64) -> String {
    let echo: Vec<&str> = field(prompt, fields::CREATOR_REPLY)
        .map(|r| r.split_whitespace().take(6).collect())
        .unwrap_or_default();
    let kw = pick_keyword(prompt, seed);
    let thanks = [
        "Thanks for replying!",
        "Appreciate the answer!",
        "Oh nice, thanks!",
    ];
    let mut body = pick(&thanks, seed, 6).to_string();
    if !echo.is_empty() {
        body.push_str(&format!(" You said \"{}\"", echo.join(" ")));
        body.push_str(" and that makes sense.");
    }
    body.push(' ');
    body.push_str(&pick(MIDDLES, seed, 7).replace("{kw}", &kw));
    body
}
