//! Single-level Haar filter bank and the volatility difficulty scores
//! derived from its high-frequency coefficients.

use crate::error::{Error, Result};
use crate::market_data::Sample;
use crate::par;

use std::f64::consts::SQRT_2;

/// Per-channel smooth (low-frequency) and detail (high-frequency)
/// coefficients of one decomposition level.
#[derive(Clone, Debug)]
pub struct DwtResult {
    pub smooth: Vec<Vec<f64>>,
    pub detail: Vec<Vec<f64>>,
}

impl DwtResult {
    pub fn channel_count(&self) -> usize {
        self.smooth.len()
    }
}

/// One level of the orthonormal Haar filter bank:
/// `smooth[k] = (x[2k] + x[2k+1]) / sqrt(2)`,
/// `detail[k] = (x[2k] - x[2k+1]) / sqrt(2)`.
/// Odd lengths are padded by edge replication, so both outputs have
/// `ceil(n / 2)` entries.
pub fn dwt_single_level(signal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::SignalTooShort { len: n });
    }
    let half = n.div_ceil(2);
    let mut smooth = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for k in 0..half {
        let a = signal[2 * k];
        let b = if 2 * k + 1 < n {
            signal[2 * k + 1]
        } else {
            signal[n - 1]
        };
        smooth.push((a + b) / SQRT_2);
        detail.push((a - b) / SQRT_2);
    }
    Ok((smooth, detail))
}

/// Invert one Haar level. `original_len` trims the padded tail for signals
/// that were odd-length on the way in.
pub fn inverse_single_level(smooth: &[f64], detail: &[f64], original_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(smooth.len() * 2);
    for (s, d) in smooth.iter().zip(detail) {
        out.push((s + d) / SQRT_2);
        out.push((s - d) / SQRT_2);
    }
    out.truncate(original_len);
    out
}

/// Recursing decomposition: re-apply the filter bank to the smooth part.
/// Returns the final smooth coefficients and the detail coefficients of
/// every level, coarsest last. Levels stop early once the smooth part
/// drops below 2 entries.
pub fn dwt_multi_level(signal: &[f64], levels: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut smooth = signal.to_vec();
    let mut details = Vec::new();
    for _ in 0..levels.max(1) {
        if smooth.len() < 2 {
            break;
        }
        let (s, d) = dwt_single_level(&smooth)?;
        details.push(d);
        smooth = s;
    }
    Ok((smooth, details))
}

/// Decompose every feature channel of a sample along the time axis.
pub fn dwt_sample(sample: &Sample) -> Result<DwtResult> {
    let mut smooth = Vec::with_capacity(sample.features.cols());
    let mut detail = Vec::with_capacity(sample.features.cols());
    for c in 0..sample.features.cols() {
        let (s, d) = dwt_single_level(&sample.features.column(c))?;
        smooth.push(s);
        detail.push(d);
    }
    Ok(DwtResult { smooth, detail })
}

/// Volatility difficulty of one sample: the Euclidean norm of all detail
/// coefficients across feature channels.
pub fn sample_difficulty(sample: &Sample) -> f64 {
    sample_difficulty_with_levels(sample, 1)
}

/// Like [`sample_difficulty`] but concatenating the detail coefficients of
/// `levels` decomposition levels.
pub fn sample_difficulty_with_levels(sample: &Sample, levels: usize) -> f64 {
    let mut sum_sq = 0.0;
    for c in 0..sample.features.cols() {
        let column = sample.features.column(c);
        let (_, details) = match dwt_multi_level(&column, levels) {
            Ok(r) => r,
            Err(_) => continue,
        };
        for level in details {
            for d in level {
                sum_sq += d * d;
            }
        }
    }
    sum_sq.sqrt()
}

/// Fill `difficulty` on every sample, in parallel when enabled.
pub fn attach_difficulties(samples: &mut [Sample], levels: usize) {
    par::for_each_mut(samples, |sample| {
        sample.difficulty = sample_difficulty_with_levels(sample, levels);
    });
}

/// Task difficulty: root sum of squares of its samples' difficulties.
pub fn task_difficulty(sample_difficulties: &[f64]) -> Result<f64> {
    if sample_difficulties.is_empty() {
        return Err(Error::EmptyInput("task difficulty of an empty sample list"));
    }
    Ok(sample_difficulties
        .iter()
        .map(|c| c * c)
        .sum::<f64>()
        .sqrt())
}
