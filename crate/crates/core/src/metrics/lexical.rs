use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{ngram_counts, ngrams};
use crate::error::{Error, Result};

/// Replaces a zero clipped count for orders above one.
pub const BLEU_EPSILON: f64 = 0.1;
pub const DEFAULT_MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistinctScore {
    /// Mean number of distinct n-grams per comment.
    pub distinct: f64,
    /// Mean of distinct / total n-grams per comment.
    pub normalized: f64,
}

pub fn distinct_ngrams(corpus: &[Vec<String>], n: usize) -> Result<DistinctScore> {
    if !(1..=4).contains(&n) {
        return Err(Error::input(format!(
            "distinct n-gram order must be 1..=4, got {n}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::input("distinct n-grams of an empty corpus"));
    }
    let (mut distinct, mut normalized) = (0.0, 0.0);
    for tokens in corpus {
        let total = ngrams(tokens, n).count();
        if total == 0 {
            continue;
        }
        let unique = ngram_counts(tokens, n).len();
        distinct += unique as f64;
        normalized += unique as f64 / total as f64;
    }
    let k = corpus.len() as f64;
    Ok(DistinctScore {
        distinct: distinct / k,
        normalized: normalized / k,
    })
}

/// Sentence BLEU of `candidate` against `references`.
///
/// Orders run 1..=min(max_n, len) with uniform weights. No unigram match
/// gives 0; a zero count at a higher order is replaced by `BLEU_EPSILON`.
/// The brevity penalty uses the closest reference length, shorter on ties.
pub fn sentence_bleu(candidate: &[String], references: &[&[String]], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let max_ref = |g: &[String], n: usize| -> usize {
        references
            .iter()
            .map(|r| r.windows(n).filter(|w| *w == g).count())
            .max()
            .unwrap_or(0)
    };
    let lengths: Vec<usize> = references.iter().map(|r| r.len()).collect();
    bleu_from(
        candidate,
        max_n,
        lengths_closest(&lengths, candidate.len()),
        |g, n| max_ref(g, n),
    )
}

fn lengths_closest(lengths: &[usize], c: usize) -> usize {
    let mut best = lengths[0];
    for &r in &lengths[1..] {
        let (d, bd) = (r.abs_diff(c), best.abs_diff(c));
        if d < bd || (d == bd && r < best) {
            best = r;
        }
    }
    best
}

fn bleu_from(
    candidate: &[String],
    max_n: usize,
    ref_len: usize,
    max_ref: impl Fn(&[String], usize) -> usize,
) -> f64 {
    let orders = max_n.max(1).min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let counts = ngram_counts(candidate, n);
        let total = candidate.len() + 1 - n;
        let clipped: usize = counts.iter().map(|(g, &c)| c.min(max_ref(g, n))).sum();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            BLEU_EPSILON / total as f64
        };
        log_sum += p.ln();
    }
    let c = candidate.len() as f64;
    let r = ref_len as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
}

/// (largest count, second largest count, index of the largest holder).
type Top2 = (usize, usize, usize);

/// Per n-gram, the largest and second largest count over the corpus plus
/// the holder of the largest, so the max over "everyone but i" is O(1).
struct TopCounts<'a> {
    tables: Vec<HashMap<&'a [String], Top2>>,
    lengths: BTreeMap<usize, usize>,
}

impl<'a> TopCounts<'a> {
    fn build(corpus: &'a [Vec<String>], max_n: usize) -> Self {
        let mut tables = vec![HashMap::new(); max_n];
        let mut lengths = BTreeMap::new();
        for (i, tokens) in corpus.iter().enumerate() {
            *lengths.entry(tokens.len()).or_insert(0) += 1;
            for n in 1..=max_n {
                for (g, c) in ngram_counts(tokens, n) {
                    let e = tables[n - 1].entry(g).or_insert((0, 0, usize::MAX));
                    if c > e.0 {
                        *e = (c, e.0, i);
                    } else if c > e.1 {
                        e.1 = c;
                    }
                }
            }
        }
        Self { tables, lengths }
    }

    fn max_excluding(&self, g: &[String], n: usize, owner: usize) -> usize {
        match self.tables[n - 1].get(g) {
            Some(&(_, second, holder)) if holder == owner => second,
            Some(&(top, _, _)) => top,
            None => 0,
        }
    }

    /// Closest length among everyone but one comment of length `c`.
    fn closest_excluding(&self, c: usize) -> Option<usize> {
        if self.lengths.get(&c).copied().unwrap_or(0) >= 2 {
            return Some(c);
        }
        let below = self.lengths.range(..c).next_back().map(|(&l, _)| l);
        let above = self.lengths.range(c + 1..).next().map(|(&l, _)| l);
        match (below, above) {
            (Some(b), Some(a)) => Some(if c - b <= a - c { b } else { a }),
            (b, a) => b.or(a),
        }
    }
}

/// Canonical order (sorted token sequences) followed by a seeded subset.
pub(crate) fn canonical_subsample(
    corpus: &[Vec<String>],
    size: Option<usize>,
    seed: u64,
) -> Vec<Vec<String>> {
    let mut sorted = corpus.to_vec();
    sorted.sort();
    match size {
        Some(k) if k < sorted.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, sorted.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| sorted[i].clone()).collect()
        }
        _ => sorted,
    }
}

/// Mean BLEU of every comment against the rest of the corpus. With
/// `subsample`, a seeded subset of that size is drawn first (after a
/// canonical sort) and scored against itself.
pub fn self_bleu(
    corpus: &[Vec<String>],
    max_n: usize,
    subsample: Option<usize>,
    seed: u64,
) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(Error::input("self-BLEU needs at least two comments"));
    }
    if max_n == 0 {
        return Err(Error::input("self-BLEU max order must be positive"));
    }
    if subsample.is_some_and(|k| k < 2) {
        return Err(Error::input(
            "self-BLEU subsample must hold at least two comments",
        ));
    }
    let set = canonical_subsample(corpus, subsample, seed);
    let top = TopCounts::build(&set, max_n);
    let mut sum = 0.0;
    for (i, cand) in set.iter().enumerate() {
        if cand.is_empty() {
            continue;
        }
        let r = top.closest_excluding(cand.len()).unwrap_or(cand.len());
        sum += bleu_from(cand, max_n, r, |g, n| top.max_excluding(g, n, i));
    }
    Ok(sum / set.len() as f64)
}

/// Clipped n-gram overlap divided by the comment's n-gram count.
pub fn rouge_n_precision(comment: &[String], reference: &[String], n: usize) -> f64 {
    let total = ngrams(comment, n).count();
    if total == 0 || n == 0 {
        return 0.0;
    }
    let reference = ngram_counts(reference, n);
    let overlap: usize = ngram_counts(comment, n)
        .iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum();
    overlap as f64 / total as f64
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_precision(comment: &[String], reference: &[String]) -> f64 {
    if comment.is_empty() {
        return 0.0;
    }
    lcs_len(comment, reference) as f64 / comment.len() as f64
}
