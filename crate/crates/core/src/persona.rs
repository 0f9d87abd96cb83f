//! Persona corpus loading, embedding index, and exhaustive cosine ranking.

use std::collections::HashMap;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Embedder, EmbeddingVector};
use crate::hashing::short_hash;

pub const PERSONA_MAX_CHARS: usize = 1000;
pub const DEFAULT_TOP_K: usize = 30;
pub const DEFAULT_MIN_SCORE: f64 = 0.0;
pub const INDEX_FORMAT: &str = "reelcrowd-persona-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaSource {
    Dataset,
    UserDefined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub persona_id: String,
    pub text: String,
    pub source: PersonaSource,
}

pub fn derive_persona_id(text: &str) -> String {
    format!("p-{}", short_hash(text.trim().as_bytes()))
}

fn validate_text(text: &str) -> Result<String> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::input("persona text is empty"));
    }
    let chars = text.chars().count();
    if chars > PERSONA_MAX_CHARS {
        return Err(Error::input(format!(
            "persona text is {chars} characters, limit is {PERSONA_MAX_CHARS}"
        )));
    }
    Ok(text.to_string())
}

impl Persona {
    pub fn new(persona_id: Option<String>, text: &str, source: PersonaSource) -> Result<Self> {
        let text = validate_text(text)?;
        let persona_id = match persona_id {
            Some(id) if !id.trim().is_empty() => id.trim().to_string(),
            _ => derive_persona_id(&text),
        };
        Ok(Self {
            persona_id,
            text,
            source,
        })
    }

    pub fn user_defined(text: &str) -> Result<Self> {
        Self::new(None, text, PersonaSource::UserDefined)
    }
}

#[derive(Deserialize)]
struct PersonaLine {
    #[serde(default)]
    persona_id: Option<String>,
    text: String,
}

/// Reads one persona per line: plain text (sentences separated by periods)
/// or a JSON object `{"persona_id"?, "text"}`. Lines whose derived id
/// repeats collapse to the first occurrence.
pub fn parse_personas(content: &str) -> Result<Vec<Persona>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<Persona> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, text) = if line.starts_with('{') {
            let parsed: PersonaLine = serde_json::from_str(line)
                .map_err(|e| Error::input(format!("persona line {line_no}: {e}")))?;
            (parsed.persona_id, parsed.text)
        } else {
            (None, line.to_string())
        };
        let persona = Persona::new(id, &text, PersonaSource::Dataset)
            .map_err(|e| Error::input(format!("persona line {line_no}: {e}")))?;
        match seen.get(&persona.persona_id) {
            Some(&prev) if out[prev].text == persona.text => continue,
            Some(_) => {
                return Err(Error::input(format!(
                    "persona line {line_no}: id {} already used for different text",
                    persona.persona_id
                )))
            }
            None => {
                seen.insert(persona.persona_id.clone(), out.len());
                out.push(persona);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::input("persona file holds no personas"));
    }
    Ok(out)
}

pub fn load_personas(path: &Path) -> Result<Vec<Persona>> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    parse_personas(&content)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub persona_id: String,
    pub text: String,
    pub vector: Vec<f64>,
}

/// Embedded persona corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaIndex {
    format: String,
    version: u32,
    model_name: String,
    dimension: usize,
    rows: Vec<IndexRow>,
}

impl PersonaIndex {
    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn persona(&self, persona_id: &str) -> Option<Persona> {
        self.rows
            .iter()
            .find(|r| r.persona_id == persona_id)
            .map(|r| Persona {
                persona_id: r.persona_id.clone(),
                text: r.text.clone(),
                source: PersonaSource::Dataset,
            })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes through a temporary file so a partial index never lands at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Loads an index, refusing one built with a different embedding model.
    pub fn load(path: &Path, expected_model: &str) -> Result<Self> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let index: PersonaIndex = serde_json::from_str(&content)
            .map_err(|e| Error::input(format!("{}: not a persona index: {e}", path.display())))?;
        if index.format != INDEX_FORMAT || index.version != INDEX_VERSION {
            return Err(Error::input(format!(
                "{}: unsupported index format {} v{}",
                path.display(),
                index.format,
                index.version
            )));
        }
        if index.model_name != expected_model {
            return Err(Error::StaleIndex {
                built_with: index.model_name,
                configured: expected_model.to_string(),
            });
        }
        if index.rows.iter().any(|r| r.vector.len() != index.dimension) {
            return Err(Error::Integrity(format!(
                "{}: mixed vector dimensions",
                path.display()
            )));
        }
        Ok(index)
    }
}

pub async fn build_index(
    personas: &[Persona],
    embedder: &dyn Embedder,
    parallelism: usize,
) -> Result<PersonaIndex> {
    if personas.is_empty() {
        return Err(Error::input("cannot index an empty persona list"));
    }
    let vectors: Vec<EmbeddingVector> = stream::iter(
        personas
            .iter()
            .map(|p| async move {
                embedder.embed(&p.text).await.map_err(|e| {
                    Error::Generation(format!("embedding persona {} failed: {e}", p.persona_id))
                })
            })
            .collect::<Vec<_>>(),
    )
    .buffered(parallelism.max(1))
    .try_collect()
    .await?;
    let dimension = vectors[0].dimension();
    if let Some((p, _)) = personas
        .iter()
        .zip(&vectors)
        .find(|(_, v)| v.dimension() != dimension)
    {
        return Err(Error::Integrity(format!(
            "embedding for persona {} has a different dimension",
            p.persona_id
        )));
    }
    Ok(PersonaIndex {
        format: INDEX_FORMAT.to_string(),
        version: INDEX_VERSION,
        model_name: embedder.model_name().to_string(),
        dimension,
        rows: personas
            .iter()
            .zip(vectors)
            .map(|(p, v)| IndexRow {
                persona_id: p.persona_id.clone(),
                text: p.text.clone(),
                vector: v.values().to_vec(),
            })
            .collect(),
    })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::input("cosine similarity of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPersona {
    pub persona_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingOptions {
    pub top_k: usize,
    /// Personas scoring below this are dropped even when inside the top k.
    pub min_score: Option<f64>,
}

impl Default for RankingOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            min_score: Some(DEFAULT_MIN_SCORE),
        }
    }
}

/// Keywords as the single query string that gets embedded.
pub fn keyword_query(keywords: &[String]) -> String {
    keywords.join(", ")
}

/// Scores every persona against `query`, sorted by score descending with
/// ties broken by ascending persona id.
pub fn rank_by_vector(
    index: &PersonaIndex,
    query: &[f64],
    options: RankingOptions,
) -> Result<Vec<RankedPersona>> {
    if index.is_empty() {
        return Err(Error::input("persona index is empty"));
    }
    if options.top_k == 0 {
        return Err(Error::input("k must be positive"));
    }
    let k = if options.top_k > index.len() {
        tracing::warn!(
            k = options.top_k,
            size = index.len(),
            "k exceeds index size, clamping"
        );
        index.len()
    } else {
        options.top_k
    };
    let mut scored = index
        .rows
        .iter()
        .map(|row| {
            Ok(RankedPersona {
                persona_id: row.persona_id.clone(),
                score: cosine_similarity(&row.vector, query)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.persona_id.cmp(&b.persona_id))
    });
    scored.truncate(k);
    if let Some(floor) = options.min_score {
        scored.retain(|r| r.score >= floor);
    }
    Ok(scored)
}

pub async fn rank_personas(
    index: &PersonaIndex,
    keywords: &[String],
    embedder: &dyn Embedder,
    options: RankingOptions,
) -> Result<Vec<RankedPersona>> {
    if keywords.is_empty() {
        return Err(Error::input("no keywords to query with"));
    }
    let query = embedder.embed(&keyword_query(keywords)).await?;
    rank_by_vector(index, query.values(), options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallLog, MockEmbedder};
    use proptest::prelude::*;

    #[test]
    fn plain_line_persona() {
        let p = parse_personas("i like dogs. i live in nashville.\n").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].text, "i like dogs. i live in nashville.");
        assert_eq!(
            p[0].persona_id,
            derive_persona_id("i like dogs. i live in nashville.")
        );
    }

    #[test]
    fn duplicates_collapse() {
        let p = parse_personas("i like dogs.\ni like cats.\ni like dogs.\n").unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn json_lines_variant() {
        let p = parse_personas(
            "{\"persona_id\": \"a\", \"text\": \"i surf.\"}\n{\"text\": \"i bake.\"}",
        )
        .unwrap();
        assert_eq!(p[0].persona_id, "a");
        assert_eq!(p[1].persona_id, derive_persona_id("i bake."));
    }

    #[test]
    fn malformed_json_names_line() {
        let err = parse_personas("i like dogs.\n{\"text\": 3}\n").unwrap_err();
        assert!(matches!(err, Error::Input(m) if m.contains("line 2")));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(parse_personas("\n  \n").is_err());
    }

    #[test]
    fn length_limit() {
        assert!(Persona::user_defined(&"x".repeat(1000)).is_ok());
        assert!(Persona::user_defined(&"x".repeat(1001)).is_err());
        assert!(Persona::user_defined("x").is_ok());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    async fn index_of(texts: &[&str]) -> PersonaIndex {
        let personas: Vec<Persona> = texts
            .iter()
            .map(|t| Persona::new(None, t, PersonaSource::Dataset).unwrap())
            .collect();
        build_index(&personas, &MockEmbedder::new(16, CallLog::new()), 4)
            .await
            .unwrap()
    }

    #[tokio::test]
    async fn build_is_deterministic_and_unit_norm() {
        let a = index_of(&["a", "b", "c"]).await;
        let b = index_of(&["a", "b", "c"]).await;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.len(), 3);
        for row in a.rows() {
            let n: f64 = row.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[tokio::test]
    async fn stale_model_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        let index = index_of(&["a", "b"]).await;
        index.save(&path).unwrap();
        assert_eq!(PersonaIndex::load(&path, "mock-embedder").unwrap(), index);
        assert!(matches!(
            PersonaIndex::load(&path, "other-model").unwrap_err(),
            Error::StaleIndex { .. }
        ));
    }

    #[tokio::test]
    async fn identical_text_ties_break_by_id() {
        let mut index = index_of(&["same text", "other"]).await;
        let dup = IndexRow {
            persona_id: "aaa".into(),
            ..index.rows[0].clone()
        };
        index.rows.push(dup);
        let query = index.rows[0].vector.clone();
        let ranked = rank_by_vector(
            &index,
            &query,
            RankingOptions {
                top_k: 3,
                min_score: None,
            },
        )
        .unwrap();
        assert_eq!(ranked[0].persona_id, "aaa");
        assert_eq!(ranked[0].score, ranked[1].score);
    }

    #[tokio::test]
    async fn k_is_clamped() {
        let index = index_of(&["a", "b"]).await;
        let q = MockEmbedder::vector_for("q", 16);
        let ranked = rank_by_vector(
            &index,
            &q,
            RankingOptions {
                top_k: 10,
                min_score: None,
            },
        )
        .unwrap();
        assert_eq!(ranked.len(), 2);
        assert!(rank_by_vector(
            &index,
            &q,
            RankingOptions {
                top_k: 0,
                min_score: None
            }
        )
        .is_err());
    }

    #[tokio::test]
    async fn floor_drops_low_scores() {
        let index = index_of(&["a", "b", "c", "d", "e", "f", "g", "h"]).await;
        let q = MockEmbedder::vector_for("q", 16);
        let ranked = rank_by_vector(
            &index,
            &q,
            RankingOptions {
                top_k: 8,
                min_score: Some(0.0),
            },
        )
        .unwrap();
        assert!(ranked.iter().all(|r| r.score >= 0.0));
        let all = rank_by_vector(
            &index,
            &q,
            RankingOptions {
                top_k: 8,
                min_score: None,
            },
        )
        .unwrap();
        assert_eq!(ranked.len(), all.iter().filter(|r| r.score >= 0.0).count());
    }

    proptest! {
        #[test]
        fn cosine_symmetry_and_scale(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() <= 1e-12);
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() <= 1e-9);
        }
    }
}
