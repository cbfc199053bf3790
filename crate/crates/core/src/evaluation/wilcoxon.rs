//! Two-sided Wilcoxon signed-rank test for paired scores: the exact
//! distribution of the positive-rank sum for up to 20 pairs, a tie-corrected
//! normal approximation beyond.

use crate::error::{Error, Result};

const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// Whether the exact distribution was used.
    pub exact: bool,
}

/// Ranks of |d| in ascending order, tied values receiving their average
/// rank. Returned in the order of `values`.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p-value for the positive-rank sum `w_plus`, by dynamic
/// programming over all 2^n sign assignments. Ranks are doubled so tied
/// (half-integer) ranks stay integral.
fn exact_p_value(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments with doubled rank sum s.
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let n_assignments = 2f64.powi(ranks.len() as i32);
    let w2 = (w_plus * 2.0).round() as usize;
    let p_le: f64 = counts[..=w2].iter().sum::<f64>() / n_assignments;
    let p_ge: f64 = counts[w2..].iter().sum::<f64>() / n_assignments;
    (2.0 * p_le.min(p_ge)).min(1.0)
}

/// Standard normal upper-tail doubled: 2 * (1 - Phi(|z|)).
fn two_sided_normal(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Paired two-sided signed-rank test. Zero differences are dropped first;
/// at least 6 non-zero pairs must remain.
pub fn wilcoxon_signed_rank(scores_a: &[f64], scores_b: &[f64]) -> Result<WilcoxonResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::LengthMismatch {
            left: scores_a.len(),
            right: scores_b.len(),
        });
    }
    let diffs: Vec<f64> = scores_a
        .iter()
        .zip(scores_b)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 6 {
        return Err(Error::TooFewPairs { n });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= EXACT_LIMIT {
        return Ok(WilcoxonResult {
            statistic: w_plus,
            p_value: exact_p_value(&ranks, w_plus),
            n_used: n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    // Tie correction subtracts sum(t^3 - t) / 48 from the variance.
    let mut tie_term = 0.0;
    let mut sorted = magnitudes.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean) / variance.sqrt();
    Ok(WilcoxonResult {
        statistic: w_plus,
        p_value: two_sided_normal(z).min(1.0),
        n_used: n,
        exact: false,
    })
}
