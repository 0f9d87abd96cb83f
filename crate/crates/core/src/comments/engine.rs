use std::sync::Arc;

use futures::stream::{self, StreamExt, TryStreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompts::{
    build_custom_prompt, build_primary_prompt, build_reply_prompt, build_thread_prompt,
    default_fewshot,
};
use super::{Comment, CommentBatchPlan, CommentKind, IdentityPool, BODY_MAX_CHARS};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::gateway::{ChatExchange, ChatModel};
use crate::hashing::{hash_parts, seed_from};
use crate::persona::Persona;
use crate::summary::VideoSummary;
use crate::video::VideoMetadata;

/// Everything a comment prompt needs to know about the video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoContext {
    pub video_id: String,
    pub metadata: VideoMetadata,
    pub thumbnail_description: Option<String>,
    pub summary: VideoSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub parallelism: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            parallelism: 4,
        }
    }
}

/// Strips wrapping quotes, collapses whitespace and caps the length.
/// Returns `None` when nothing is left.
pub fn clean_body(raw: &str) -> Option<String> {
    let mut text = raw.trim();
    loop {
        let stripped = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')]
            .iter()
            .find_map(|(open, close)| {
                text.strip_prefix(*open)
                    .and_then(|t| t.strip_suffix(*close))
            });
        match stripped {
            Some(inner) => text = inner.trim(),
            None => break,
        }
    }
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return None;
    }
    Some(collapsed.chars().take(BODY_MAX_CHARS).collect())
}

pub fn batch_comment_id(
    video_id: &str,
    batch_index: usize,
    kind: CommentKind,
    ordinal: usize,
) -> String {
    format!(
        "c-{}",
        hash_parts(&[
            video_id,
            &batch_index.to_string(),
            kind.as_str(),
            &ordinal.to_string()
        ])
    )
}

/// Distinct primary indices that receive a thread comment, ascending.
pub fn select_thread_parents(
    plan: &CommentBatchPlan,
    video_id: &str,
    batch_index: usize,
    seed: u64,
) -> Vec<usize> {
    let key = hash_parts(&[
        "threads",
        video_id,
        &batch_index.to_string(),
        &seed.to_string(),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(key.as_bytes()));
    let mut picked =
        rand::seq::index::sample(&mut rng, plan.primary_count, plan.thread_count).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Clone)]
pub struct CommentEngine {
    chat: Arc<dyn ChatModel>,
    identities: Arc<IdentityPool>,
    fewshot: Arc<Vec<String>>,
    clock: Arc<dyn Clock>,
    settings: GenerationSettings,
}

impl CommentEngine {
    pub fn new(
        chat: Arc<dyn ChatModel>,
        identities: Arc<IdentityPool>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            chat,
            identities,
            fewshot: Arc::new(default_fewshot()),
            clock,
            settings: GenerationSettings::default(),
        }
    }

    pub fn with_fewshot(mut self, examples: Vec<String>) -> Result<Self> {
        let examples: Vec<String> = examples
            .into_iter()
            .map(|e| e.trim().to_string())
            .filter(|e| !e.is_empty())
            .collect();
        if examples.is_empty() {
            return Err(Error::input("few-shot example list is empty"));
        }
        self.fewshot = Arc::new(examples);
        Ok(self)
    }

    pub fn with_settings(mut self, settings: GenerationSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn fewshot(&self) -> &[String] {
        &self.fewshot
    }

    pub fn identities(&self) -> &IdentityPool {
        &self.identities
    }

    fn budget(&self) -> usize {
        self.chat.context_budget()
    }

    /// One completion, retried once if the cleaned body comes back empty.
    async fn complete_body(&self, exchange: &ChatExchange) -> Result<String> {
        for attempt in 1..=2 {
            let raw = self.chat.complete(exchange).await?;
            if let Some(body) = clean_body(&raw) {
                return Ok(body);
            }
            tracing::warn!(attempt, "empty comment body from chat backend");
        }
        Err(Error::Generation(
            "chat backend returned an empty comment twice".into(),
        ))
    }

    fn make_comment(
        &self,
        comment_id: String,
        ctx: &VideoContext,
        kind: CommentKind,
        body: String,
        persona: Option<&Persona>,
        parent_id: Option<String>,
    ) -> Comment {
        let identity = self.identities.assign(&comment_id);
        Comment {
            comment_id,
            video_id: ctx.video_id.clone(),
            kind,
            body,
            author_name: identity.author_name,
            avatar_seed: identity.avatar_seed,
            persona_id: persona.map(|p| p.persona_id.clone()),
            parent_id,
            created_at: self.clock.now(),
        }
    }

    /// `persona` is `None` in no-persona mode.
    pub async fn generate_primary(
        &self,
        ctx: &VideoContext,
        persona: Option<&Persona>,
        comment_id: String,
    ) -> Result<Comment> {
        let prompt = build_primary_prompt(
            ctx,
            persona,
            &self.fewshot,
            self.budget(),
            self.settings.temperature,
        )?;
        let body = self.complete_body(&prompt).await?;
        Ok(self.make_comment(comment_id, ctx, CommentKind::Primary, body, persona, None))
    }

    pub async fn generate_thread(
        &self,
        ctx: &VideoContext,
        parent: &Comment,
        persona: Option<&Persona>,
        comment_id: String,
    ) -> Result<Comment> {
        if parent.kind != CommentKind::Primary {
            return Err(Error::input(format!(
                "thread comments answer primary comments, got {}",
                parent.kind.as_str()
            )));
        }
        let prompt = build_thread_prompt(
            ctx,
            parent,
            persona,
            &self.fewshot,
            self.budget(),
            self.settings.temperature,
        )?;
        let body = self.complete_body(&prompt).await?;
        Ok(self.make_comment(
            comment_id,
            ctx,
            CommentKind::Thread,
            body,
            persona,
            Some(parent.comment_id.clone()),
        ))
    }

    /// Answers the creator's reply at the end of `chain` (root first),
    /// speaking with the persona of the comment the creator answered.
    pub async fn generate_reply(
        &self,
        ctx: &VideoContext,
        chain: &[Comment],
        persona: Option<&Persona>,
        comment_id: String,
    ) -> Result<Comment> {
        let creator = chain
            .last()
            .filter(|c| c.kind == CommentKind::Creator)
            .ok_or_else(|| Error::input("a generated reply must answer a creator reply"))?;
        let prompt = build_reply_prompt(
            ctx,
            chain,
            persona,
            &self.fewshot,
            self.budget(),
            self.settings.temperature,
        )?;
        let body = self.complete_body(&prompt).await?;
        Ok(self.make_comment(
            comment_id,
            ctx,
            CommentKind::Reply,
            body,
            persona,
            Some(creator.comment_id.clone()),
        ))
    }

    pub async fn generate_custom(
        &self,
        ctx: &VideoContext,
        persona: &Persona,
        comment_id: String,
    ) -> Result<Comment> {
        let prompt = build_custom_prompt(
            ctx,
            persona,
            &self.fewshot,
            self.budget(),
            self.settings.temperature,
        )?;
        let body = self.complete_body(&prompt).await?;
        Ok(self.make_comment(
            comment_id,
            ctx,
            CommentKind::CustomPersona,
            body,
            Some(persona),
            None,
        ))
    }

    /// Generates one batch: primaries take ranked personas in order, thread
    /// comments take the following ranks and answer distinct primaries
    /// picked by the seeded generator. Later batches continue through the
    /// ranking, wrapping around when it runs out. An empty `personas` list
    /// means no-persona mode.
    pub async fn generate_batch(
        &self,
        ctx: &VideoContext,
        personas: &[Persona],
        plan: CommentBatchPlan,
        batch_index: usize,
        seed: u64,
    ) -> Result<Vec<Comment>> {
        let offset = batch_index * plan.total;
        let persona_at = |rank: usize| -> Option<&Persona> {
            (!personas.is_empty()).then(|| &personas[rank % personas.len()])
        };

        let primaries: Vec<Comment> = stream::iter(
            (0..plan.primary_count)
                .into_iter()
                .map(|i| {
                    let id = batch_comment_id(&ctx.video_id, batch_index, CommentKind::Primary, i);
                    self.generate_primary(ctx, persona_at(offset + i), id)
                })
                .collect::<Vec<_>>(),
        )
        .buffered(self.settings.parallelism.max(1))
        .try_collect()
        .await?;

        let parents = select_thread_parents(&plan, &ctx.video_id, batch_index, seed);
        let threads: Vec<Comment> = stream::iter(
            parents
                .iter()
                .enumerate()
                .map(|(j, &parent_idx)| {
                    let parent = &primaries[parent_idx];
                    let mut rank = offset + plan.primary_count + j;
                    if personas.len() > 1 {
                        while persona_at(rank).map(|p| &p.persona_id) == parent.persona_id.as_ref()
                        {
                            rank += 1;
                        }
                    }
                    let id = batch_comment_id(&ctx.video_id, batch_index, CommentKind::Thread, j);
                    self.generate_thread(ctx, parent, persona_at(rank), id)
                })
                .collect::<Vec<_>>(),
        )
        .buffered(self.settings.parallelism.max(1))
        .try_collect()
        .await?;

        let mut out = primaries;
        out.extend(threads);
        Ok(out)
    }
}
