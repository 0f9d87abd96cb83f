use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// min(w_plus, w_minus)
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

fn average_ranks(values: &[f64]) -> (Vec<f64>, bool) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = false;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        ties |= j > i;
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of subsets of {1..n} for each possible rank sum.
fn rank_sum_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0.0; max + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; small samples without ties use the exact null
/// distribution, otherwise the tie-corrected normal approximation with
/// continuity correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::input("paired samples contain non-finite values"));
    }
    let n = diffs.len();
    if n == 0 {
        return Err(Error::input("all paired differences are zero"));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p_value, method) = if n <= EXACT_MAX_N && !ties {
        let counts = rank_sum_counts(n);
        let below: f64 = counts[..=statistic as usize].iter().sum();
        (
            (2.0 * below / 2f64.powi(n as i32)).min(1.0),
            WilcoxonMethod::Exact,
        )
    } else {
        let nf = n as f64;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut i = 0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
            let t = j as f64;
            var -= (t * t * t - t) / 48.0;
            i += j;
        }
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - total / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            (2.0 * (1.0 - normal.cdf(z))).min(1.0)
        };
        (p, WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic,
        p_value,
        method,
    })
}

pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub label_a: String,
    pub label_b: String,
    pub test: WilcoxonResult,
    pub adjusted_p: f64,
    pub significant: bool,
}

/// Every pairwise comparison between the labeled score columns, with
/// Bonferroni adjustment across all of them.
pub fn compare_columns(
    columns: &[(String, Vec<f64>)],
    alpha: f64,
) -> Result<Vec<PairedComparison>> {
    let mut raw = Vec::new();
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            let test = wilcoxon_signed_rank(&columns[i].1, &columns[j].1)?;
            raw.push((i, j, test));
        }
    }
    let adjusted = bonferroni(&raw.iter().map(|(_, _, t)| t.p_value).collect::<Vec<_>>());
    Ok(raw
        .into_iter()
        .zip(adjusted)
        .map(|((i, j, test), adjusted_p)| PairedComparison {
            label_a: columns[i].0.clone(),
            label_b: columns[j].0.clone(),
            test,
            adjusted_p,
            significant: adjusted_p < alpha,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Enumerates all 2^n sign assignments.
    fn brute_p(diffs: &[f64]) -> f64 {
        let n = diffs.len();
        let mut abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let rank_of = |v: f64| abs.iter().position(|a| *a == v).unwrap() as f64 + 1.0;
        let observed: f64 = diffs
            .iter()
            .filter(|d| **d > 0.0)
            .map(|d| rank_of(d.abs()))
            .sum();
        let total = (n * (n + 1)) as f64 / 2.0;
        let stat = observed.min(total - observed);
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| i as f64 + 1.0)
                .sum();
            if s.min(total - s) <= stat {
                extreme += 1;
            }
        }
        extreme as f64 / (1u64 << n) as f64
    }

    #[test]
    fn exact_matches_enumeration() {
        let d = [
            6.0, 8.0, 14.0, 16.0, 23.0, 24.0, 28.0, 29.0, 41.0, -48.0, 49.0, 56.0, 60.0, -67.0,
            75.0,
        ];
        let zeros = vec![0.0; d.len()];
        let r = wilcoxon_signed_rank(&d, &zeros).unwrap();
        assert_eq!(r.statistic, 24.0);
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert!((r.p_value - brute_p(&d)).abs() < 1e-12);
        assert!((r.p_value - 0.041259765625).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.gen_range(1..=12);
            let mut d: Vec<f64> = (1..=n)
                .map(|k| k as f64 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            d.reverse();
            let r = wilcoxon_signed_rank(&d, &vec![0.0; n]).unwrap();
            assert!((r.p_value - brute_p(&d)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_approximation_for_ties() {
        let x = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 8.0];
        let y = [0.0; 8];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!(r.p_value > 0.0 && r.p_value < 0.05);
        assert_eq!(r.w_minus, 0.0);
    }

    #[test]
    fn symmetric_and_guarded() {
        let x = [3.0, 1.0, 4.0, 1.5, 5.0];
        let y = [2.0, 7.0, 1.0, 8.0, 2.5];
        let a = wilcoxon_signed_rank(&x, &y).unwrap();
        let b = wilcoxon_signed_rank(&y, &x).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert!(wilcoxon_signed_rank(&x, &x).is_err());
        assert!(wilcoxon_signed_rank(&x, &y[..2]).is_err());
    }

    #[test]
    fn bonferroni_caps() {
        assert_eq!(bonferroni(&[0.01, 0.02, 0.5]), vec![0.03, 0.06, 1.0]);
        let cols = vec![
            ("a".to_string(), (0..20).map(|i| i as f64 + 10.0).collect()),
            ("b".to_string(), (0..20).map(|i| i as f64 * 0.5).collect()),
            (
                "c".to_string(),
                (0..20)
                    .map(|i| i as f64 * 0.5 + 0.25 * (i % 3) as f64)
                    .collect(),
            ),
        ];
        let cmp = compare_columns(&cols, DEFAULT_ALPHA).unwrap();
        assert_eq!(cmp.len(), 3);
        assert!(cmp[0].significant);
        assert!(cmp.iter().all(|c| c.adjusted_p >= c.test.p_value));
    }
}
