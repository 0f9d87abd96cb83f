use std::collections::{BTreeSet, HashMap};

use futures::stream::{self, StreamExt, TryStreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gateway::Embedder;
use crate::persona::cosine_similarity;

pub const DEFAULT_MAX_PAIRS: usize = 1000;

/// Token vectors fetched once per distinct token.
pub struct TokenVectors {
    vectors: HashMap<String, Vec<f64>>,
}

impl TokenVectors {
    pub async fn fetch(
        texts: &[&[String]],
        embedder: &dyn Embedder,
        parallelism: usize,
    ) -> Result<Self> {
        let unique: BTreeSet<&String> = texts.iter().flat_map(|t| t.iter()).collect();
        let vectors = stream::iter(
            (unique)
                .into_iter()
                .map(|tok| async move {
                    Ok::<_, crate::Error>((
                        tok.clone(),
                        embedder.embed(tok).await?.values().to_vec(),
                    ))
                })
                .collect::<Vec<_>>(),
        )
        .buffered(parallelism.max(1))
        .try_collect()
        .await?;
        Ok(Self { vectors })
    }

    pub fn get(&self, token: &str) -> &[f64] {
        &self.vectors[token]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyMatch {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn directional(from: &[String], to: &[String], vectors: &TokenVectors) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for a in from {
        let mut best = f64::NEG_INFINITY;
        for b in to {
            best = best.max(cosine_similarity(vectors.get(a), vectors.get(b))?);
        }
        sum += best;
    }
    // negative similarity counts as no match so F1 stays in [0, 1]
    Ok((sum / from.len() as f64).max(0.0))
}

/// Greedy token matching between a candidate and a reference: precision
/// averages each candidate token's best cosine against the reference,
/// recall does the reverse.
pub fn greedy_match(
    candidate: &[String],
    reference: &[String],
    vectors: &TokenVectors,
) -> Result<GreedyMatch> {
    let precision = directional(candidate, reference, vectors)?;
    let recall = directional(reference, candidate, vectors)?;
    let f1 = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall)).min(1.0)
    } else {
        0.0
    };
    Ok(GreedyMatch {
        precision,
        recall,
        f1,
    })
}

/// Unordered index pairs over a corpus of `len`, all of them when they fit
/// in `max_pairs`, otherwise a seeded sample without repeats.
pub fn sample_pairs(len: usize, max_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = len * len.saturating_sub(1) / 2;
    let decode = |mut k: usize| {
        let mut i = 0;
        while k >= len - 1 - i {
            k -= len - 1 - i;
            i += 1;
        }
        (i, i + 1 + k)
    };
    if total <= max_pairs {
        return (0..total).map(decode).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, max_pairs).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(decode).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub value: f64,
    pub pairs: usize,
}

/// Mean greedy-match F1 over comment pairs of one corpus. Pairs are drawn
/// from the canonically sorted corpus so input order does not matter.
pub async fn embedding_group_score(
    corpus: &[Vec<String>],
    embedder: &dyn Embedder,
    max_pairs: usize,
    seed: u64,
) -> Result<GroupScore> {
    if corpus.len() < 2 {
        return Err(crate::Error::input(
            "group embedding score needs at least two comments",
        ));
    }
    let mut sorted = corpus.to_vec();
    sorted.sort();
    let pairs = sample_pairs(sorted.len(), max_pairs.max(1), seed);
    let texts: Vec<&[String]> = sorted.iter().map(|t| t.as_slice()).collect();
    let vectors = TokenVectors::fetch(&texts, embedder, 8).await?;
    let mut sum = 0.0;
    for &(i, j) in &pairs {
        sum += greedy_match(&sorted[i], &sorted[j], &vectors)?.f1;
    }
    Ok(GroupScore {
        value: sum / pairs.len() as f64,
        pairs: pairs.len(),
    })
}

/// Mean greedy-match F1 of each comment against the reference text.
pub async fn embedding_relevance(
    corpus: &[Vec<String>],
    reference: &[String],
    embedder: &dyn Embedder,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(crate::Error::input(
            "embedding relevance of an empty corpus",
        ));
    }
    let mut texts: Vec<&[String]> = corpus.iter().map(|t| t.as_slice()).collect();
    texts.push(reference);
    let vectors = TokenVectors::fetch(&texts, embedder, 8).await?;
    let mut sum = 0.0;
    for c in corpus {
        sum += greedy_match(c, reference, &vectors)?.f1;
    }
    Ok(sum / corpus.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallLog, MockEmbedder};
    use crate::metrics::tokenize;
    use std::collections::HashSet;

    #[tokio::test]
    async fn self_pair_scores_one() {
        let e = MockEmbedder::new(32, CallLog::new());
        let x = tokenize("garlic bread floats in orbit");
        let g = embedding_group_score(&[x.clone(), x], &e, 10, 0)
            .await
            .unwrap();
        assert_eq!(g.pairs, 1);
        assert!((g.value - 1.0).abs() < 1e-12);
    }

    #[tokio::test]
    async fn disjoint_pair_below_one() {
        let e = MockEmbedder::new(32, CallLog::new());
        let g = embedding_group_score(
            &[tokenize("alpha beta"), tokenize("gamma delta")],
            &e,
            10,
            0,
        )
        .await
        .unwrap();
        assert!(g.value < 1.0 && g.value >= 0.0);
    }

    #[test]
    fn pair_enumeration() {
        let all = sample_pairs(5, 100, 0);
        assert_eq!(all.len(), 10);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 10);
        assert!(all.iter().all(|&(i, j)| i < j && j < 5));
        let some = sample_pairs(50, 30, 3);
        assert_eq!(some.len(), 30);
        assert_eq!(some.iter().collect::<HashSet<_>>().len(), 30);
        assert_eq!(some, sample_pairs(50, 30, 3));
        assert!(sample_pairs(1, 10, 0).is_empty());
    }
}
