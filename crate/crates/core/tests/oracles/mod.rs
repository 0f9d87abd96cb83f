//! Slow, direct re-implementations used as reference answers in tests.
#![allow(dead_code)]

use std::collections::HashMap;

/// Every contiguous n-gram, duplicates included.
pub fn all_ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for start in 0..=tokens.len() - n {
        out.push(tokens[start..start + n].to_vec());
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize, epsilon: f64) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let orders = max_n.min(candidate.len());
    let mut precisions = Vec::new();
    for n in 1..=orders {
        let cand = all_ngrams(candidate, n);
        let mut seen: Vec<Vec<String>> = Vec::new();
        let mut clipped = 0usize;
        for g in &cand {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let mut best = 0;
            for r in references {
                best = best.max(occurrences(&all_ngrams(r, n), g));
            }
            clipped += occurrences(&cand, g).min(best);
        }
        if clipped == 0 && n == 1 {
            return 0.0;
        }
        let numerator = if clipped == 0 {
            epsilon
        } else {
            clipped as f64
        };
        precisions.push(numerator / cand.len() as f64);
    }
    let mut closest = references[0].len();
    for r in references {
        let d = (r.len() as i64 - candidate.len() as i64).abs();
        let dc = (closest as i64 - candidate.len() as i64).abs();
        if d < dc || (d == dc && r.len() < closest) {
            closest = r.len();
        }
    }
    let c = candidate.len() as f64;
    let bp = if c > closest as f64 {
        1.0
    } else {
        (1.0 - closest as f64 / c).exp()
    };
    let mut product = 1.0;
    for p in &precisions {
        product *= p.powf(1.0 / orders as f64);
    }
    bp * product
}

pub fn self_bleu(corpus: &[Vec<String>], max_n: usize, epsilon: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..corpus.len() {
        let refs: Vec<Vec<String>> = corpus
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, r)| r.clone())
            .collect();
        total += bleu(&corpus[i], &refs, max_n, epsilon);
    }
    total / corpus.len() as f64
}

pub fn rouge_n(comment: &[String], reference: &[String], n: usize) -> f64 {
    let cand = all_ngrams(comment, n);
    if cand.is_empty() {
        return 0.0;
    }
    let refs = all_ngrams(reference, n);
    let mut used = vec![false; refs.len()];
    let mut hits = 0;
    // match each candidate n-gram against an unused reference occurrence
    for g in &cand {
        if let Some(k) = (0..refs.len()).find(|&k| !used[k] && &refs[k] == g) {
            used[k] = true;
            hits += 1;
        }
    }
    hits as f64 / cand.len() as f64
}

pub fn lcs(a: &[String], b: &[String]) -> usize {
    fn go(
        a: &[String],
        b: &[String],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo.get(&(i, j)) {
            return *v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

pub fn rouge_l(comment: &[String], reference: &[String]) -> f64 {
    if comment.is_empty() {
        return 0.0;
    }
    lcs(comment, reference) as f64 / comment.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Greedy-matching F1 with similarities clamped at zero.
pub fn greedy_f1(a: &[String], b: &[String], vector: &dyn Fn(&str) -> Vec<f64>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let side = |x: &[String], y: &[String]| {
        let mut sum = 0.0;
        for s in x {
            let mut best = f64::MIN;
            for t in y {
                best = best.max(cosine(&vector(s), &vector(t)).clamp(-1.0, 1.0));
            }
            sum += best;
        }
        (sum / x.len() as f64).max(0.0)
    };
    let p = side(a, b);
    let r = side(b, a);
    if p + r <= 0.0 {
        0.0
    } else {
        (2.0 * p * r / (p + r)).min(1.0)
    }
}

/// Mean over all unordered pairs.
pub fn group_score(corpus: &[Vec<String>], vector: &dyn Fn(&str) -> Vec<f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..corpus.len() {
        for j in i + 1..corpus.len() {
            sum += greedy_f1(&corpus[i], &corpus[j], vector);
            count += 1;
        }
    }
    sum / count as f64
}

/// Full sort of (score, id), score descending then id ascending, first k.
pub fn top_k(scored: &[(String, f64)], k: usize) -> Vec<(String, f64)> {
    let mut all = scored.to_vec();
    for i in 0..all.len() {
        for j in 0..all.len() - 1 - i {
            let swap =
                all[j].1 < all[j + 1].1 || (all[j].1 == all[j + 1].1 && all[j].0 > all[j + 1].0);
            if swap {
                all.swap(j, j + 1);
            }
        }
    }
    all.truncate(k);
    all
}
