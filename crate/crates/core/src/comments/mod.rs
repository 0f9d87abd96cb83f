//! Simulated comments: the four generated kinds plus the creator's own
//! replies, batch quotas, synthetic identities and the comment forest.

mod engine;
mod prompts;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{hash_parts, seed_from, short_hash};

pub use engine::{clean_body, CommentEngine, GenerationSettings, VideoContext};
pub use prompts::{
    build_custom_prompt, build_primary_prompt, build_reply_prompt, build_thread_prompt,
    default_fewshot, ROLE_INSTRUCTION,
};

pub const BODY_MAX_CHARS: usize = 2000;
pub const DEFAULT_BATCH_SIZE: usize = 30;
pub const CREATOR_AUTHOR: &str = "creator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommentKind {
    Primary,
    Thread,
    Reply,
    CustomPersona,
    /// A reply typed by the video's creator; never generated.
    Creator,
}

impl CommentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommentKind::Primary => "primary",
            CommentKind::Thread => "thread",
            CommentKind::Reply => "reply",
            CommentKind::CustomPersona => "custom_persona",
            CommentKind::Creator => "creator",
        }
    }

    pub fn is_root(self) -> bool {
        matches!(self, CommentKind::Primary | CommentKind::CustomPersona)
    }

    pub fn is_generated(self) -> bool {
        self != CommentKind::Creator
    }
}

impl std::str::FromStr for CommentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "primary" => CommentKind::Primary,
            "thread" => CommentKind::Thread,
            "reply" => CommentKind::Reply,
            "custom_persona" => CommentKind::CustomPersona,
            "creator" => CommentKind::Creator,
            other => return Err(Error::input(format!("unknown comment kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: String,
    pub video_id: String,
    pub kind: CommentKind,
    pub body: String,
    pub author_name: String,
    pub avatar_seed: String,
    pub persona_id: Option<String>,
    pub parent_id: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl Comment {
    /// A creator's reply under `parent`.
    pub fn creator_reply(
        comment_id: impl Into<String>,
        parent: &Comment,
        body: &str,
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        let body = body.trim();
        if body.is_empty() {
            return Err(Error::input("reply body is empty"));
        }
        if body.chars().count() > BODY_MAX_CHARS {
            return Err(Error::input(format!(
                "reply body exceeds {BODY_MAX_CHARS} characters"
            )));
        }
        let comment_id = comment_id.into();
        Ok(Self {
            avatar_seed: avatar_seed(&comment_id),
            comment_id,
            video_id: parent.video_id.clone(),
            kind: CommentKind::Creator,
            body: body.to_string(),
            author_name: CREATOR_AUTHOR.to_string(),
            persona_id: None,
            parent_id: Some(parent.comment_id.clone()),
            created_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentBatchPlan {
    pub total: usize,
    pub primary_count: usize,
    pub thread_count: usize,
}

/// 70% primary (rounded half up, at least one) and the rest thread comments.
pub fn plan_batch(total: usize) -> Result<CommentBatchPlan> {
    if total == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    let primary_count = ((7 * total + 5) / 10).max(1);
    Ok(CommentBatchPlan {
        total,
        primary_count,
        thread_count: total - primary_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub author_name: String,
    pub avatar_seed: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityPool {
    names: Vec<String>,
    rng_seed: u64,
}

impl IdentityPool {
    /// Duplicate names are dropped, keeping first occurrences.
    pub fn new<I, S>(names: I, rng_seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let names: Vec<String> = names
            .into_iter()
            .map(|n| n.as_ref().trim().to_string())
            .filter(|n| !n.is_empty() && seen.insert(n.clone()))
            .collect();
        if names.is_empty() {
            return Err(Error::input("identity pool has no names"));
        }
        Ok(Self { names, rng_seed })
    }

    /// Built-in list of common given names.
    pub fn builtin(rng_seed: u64) -> Self {
        Self::new(include_str!("../../resources/names.txt").lines(), rng_seed)
            .expect("builtin names")
    }

    /// One name per line; SSA-style `Name,Sex,Count` rows use the first field.
    pub fn load(path: &Path, rng_seed: u64) -> Result<Self> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::new(
            content.lines().map(|l| l.split(',').next().unwrap_or("")),
            rng_seed,
        )
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn assign(&self, comment_id: &str) -> Identity {
        let key = hash_parts(&["identity", &self.rng_seed.to_string(), comment_id]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(key.as_bytes()));
        let idx = rng.gen_range(0..self.names.len());
        Identity {
            author_name: self.names[idx].clone(),
            avatar_seed: avatar_seed(comment_id),
        }
    }
}

pub fn avatar_seed(comment_id: &str) -> String {
    short_hash(comment_id.as_bytes())
}

/// Checks the forest rules: roots have no parent, replies point at an
/// existing comment on the same video, no cycles, bodies within limits.
pub fn validate_forest(comments: &[Comment]) -> Result<()> {
    let by_id: HashMap<&str, &Comment> = comments
        .iter()
        .map(|c| (c.comment_id.as_str(), c))
        .collect();
    if by_id.len() != comments.len() {
        return Err(Error::Integrity("duplicate comment ids".into()));
    }
    for c in comments {
        if c.body.trim().is_empty() || c.body.chars().count() > BODY_MAX_CHARS {
            return Err(Error::Integrity(format!(
                "comment {} has an invalid body",
                c.comment_id
            )));
        }
        match (c.kind.is_root(), &c.parent_id) {
            (true, Some(_)) => {
                return Err(Error::Integrity(format!(
                    "root comment {} has a parent",
                    c.comment_id
                )))
            }
            (false, None) => {
                return Err(Error::Integrity(format!(
                    "comment {} is missing its parent",
                    c.comment_id
                )))
            }
            (false, Some(pid)) => {
                let parent = by_id.get(pid.as_str()).ok_or_else(|| {
                    Error::Integrity(format!(
                        "comment {} points at missing parent {pid}",
                        c.comment_id
                    ))
                })?;
                if parent.video_id != c.video_id {
                    return Err(Error::Integrity(format!(
                        "comment {} crosses videos",
                        c.comment_id
                    )));
                }
            }
            (true, None) => {}
        }
    }
    for c in comments {
        let mut steps = 0;
        let mut cursor = c;
        while let Some(pid) = &cursor.parent_id {
            steps += 1;
            if steps > comments.len() {
                return Err(Error::Integrity(format!(
                    "cycle through comment {}",
                    c.comment_id
                )));
            }
            cursor = by_id[pid.as_str()];
        }
    }
    Ok(())
}

/// Depth of a comment, counting roots as 1.
pub fn depth(comments: &[Comment], comment_id: &str) -> Option<usize> {
    let by_id: HashMap<&str, &Comment> = comments
        .iter()
        .map(|c| (c.comment_id.as_str(), c))
        .collect();
    let mut cursor = *by_id.get(comment_id)?;
    let mut d = 1;
    while let Some(pid) = &cursor.parent_id {
        cursor = by_id.get(pid.as_str())?;
        d += 1;
        if d > comments.len() {
            return None;
        }
    }
    Some(d)
}

/// Path from the root down to `comment_id`, inclusive.
pub fn ancestry(comments: &[Comment], comment_id: &str) -> Result<Vec<Comment>> {
    let by_id: HashMap<&str, &Comment> = comments
        .iter()
        .map(|c| (c.comment_id.as_str(), c))
        .collect();
    let mut chain = Vec::new();
    let mut cursor = by_id
        .get(comment_id)
        .copied()
        .ok_or_else(|| Error::NotFound(format!("comment {comment_id}")))?;
    loop {
        chain.push(cursor.clone());
        if chain.len() > comments.len() {
            return Err(Error::Integrity(format!(
                "cycle through comment {comment_id}"
            )));
        }
        match &cursor.parent_id {
            Some(pid) => {
                cursor = by_id
                    .get(pid.as_str())
                    .copied()
                    .ok_or_else(|| Error::Integrity(format!("missing parent {pid}")))?
            }
            None => break,
        }
    }
    chain.reverse();
    Ok(chain)
}

/// The persona a generated answer in this conversation should speak with:
/// the nearest generated ancestor's persona.
pub fn conversation_persona(chain: &[Comment]) -> Option<&str> {
    chain
        .iter()
        .rev()
        .find(|c| c.kind.is_generated())
        .and_then(|c| c.persona_id.as_deref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentNode {
    #[serde(flatten)]
    pub comment: Comment,
    pub persona_text: Option<String>,
    pub children: Vec<CommentNode>,
}

/// Nests comments under their parents, keeping input order among siblings.
pub fn build_forest<F>(comments: &[Comment], persona_text: F) -> Result<Vec<CommentNode>>
where
    F: Fn(&str) -> Option<String>,
{
    validate_forest(comments)?;
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut roots = Vec::new();
    for (i, c) in comments.iter().enumerate() {
        match &c.parent_id {
            Some(pid) => children.entry(pid.as_str()).or_default().push(i),
            None => roots.push(i),
        }
    }
    fn node<F: Fn(&str) -> Option<String>>(
        i: usize,
        comments: &[Comment],
        children: &HashMap<&str, Vec<usize>>,
        persona_text: &F,
    ) -> CommentNode {
        let c = &comments[i];
        CommentNode {
            comment: c.clone(),
            persona_text: c.persona_id.as_deref().and_then(persona_text),
            children: children
                .get(c.comment_id.as_str())
                .map(|kids| {
                    kids.iter()
                        .map(|&k| node(k, comments, children, persona_text))
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
    Ok(roots
        .into_iter()
        .map(|i| node(i, comments, &children, &persona_text))
        .collect())
}
