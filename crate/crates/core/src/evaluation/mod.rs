//! Classification metrics, significance testing and difficulty-tercile
//! probing reports.

mod wilcoxon;

pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::Sample;
use crate::model::Backbone;
use crate::tasking::{Task, TercilePartition};

/// Binary confusion counts with positive class 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Swap the class labels on both axes.
    pub fn swapped(&self) -> Self {
        Self {
            true_pos: self.true_neg,
            false_pos: self.false_neg,
            true_neg: self.true_pos,
            false_neg: self.false_pos,
        }
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("confusion matrix of an empty batch"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => cm.true_pos += 1,
            (true, false) => cm.false_pos += 1,
            (false, false) => cm.true_neg += 1,
            (false, true) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// ACC, MCC and F1. MCC maps to 0 when any factor of its denominator is 0,
/// F1 to 0 when its denominator is 0, keeping degenerate evaluations total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub mcc: f64,
    pub f1: f64,
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("metrics of an empty confusion matrix"));
    }
    let tp = cm.true_pos as f64;
    let fp = cm.false_pos as f64;
    let tn = cm.true_neg as f64;
    let fne = cm.false_neg as f64;

    let acc = (tp + tn) / total as f64;

    let factors = [tp + fp, tp + fne, tn + fp, tn + fne];
    let mcc = if factors.contains(&0.0) {
        0.0
    } else {
        (tp * tn - fp * fne) / factors.iter().product::<f64>().sqrt()
    };

    let f1_denom = 2.0 * tp + fp + fne;
    let f1 = if f1_denom == 0.0 {
        0.0
    } else {
        2.0 * tp / f1_denom
    };

    Ok(ClassificationMetrics { acc, mcc, f1 })
}

/// Threshold a model at 0.5, count the confusion matrix against the sample
/// labels and compute metrics.
pub fn evaluate_backbone(
    model: &Backbone,
    samples: &[Sample],
) -> Result<(ClassificationMetrics, ConfusionMatrix)> {
    let predictions = model.predict(samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let cm = confusion(&predictions, &labels)?;
    Ok((classification_metrics(&cm)?, cm))
}

/// Relative gain of `new` over `old` in percent: `(new - old) / |old| * 100`.
/// Exactly equal values gain 0; otherwise a zero baseline leaves the gain
/// undefined.
pub fn relative_gain(old: f64, new: f64) -> Option<f64> {
    if new == old {
        Some(0.0)
    } else if old == 0.0 {
        None
    } else {
        Some((new - old) / old.abs() * 100.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub n_tasks: usize,
    pub n_samples: usize,
    pub baseline: ClassificationMetrics,
    pub candidate: ClassificationMetrics,
    pub acc_gain_pct: Option<f64>,
    pub mcc_gain_pct: Option<f64>,
    pub f1_gain_pct: Option<f64>,
}

/// Per-tercile metrics for two models plus relative gains of the candidate
/// over the baseline.
#[derive(Clone, Debug, Serialize)]
pub struct TercileReport {
    pub groups: Vec<GroupReport>,
}

pub fn tercile_report(
    baseline: &Backbone,
    candidate: &Backbone,
    tasks: &[Task],
    partition: &TercilePartition,
) -> Result<TercileReport> {
    let named = [
        ("easy", &partition.easy),
        ("medium", &partition.medium),
        ("hard", &partition.hard),
    ];
    let mut groups = Vec::with_capacity(3);
    for (name, indices) in named {
        let samples: Vec<Sample> = indices
            .iter()
            .flat_map(|&i| tasks[i].samples.iter().cloned())
            .collect();
        if samples.is_empty() {
            return Err(Error::EmptyGroup {
                group: name.to_string(),
            });
        }
        let (base_metrics, _) = evaluate_backbone(baseline, &samples)?;
        let (cand_metrics, _) = evaluate_backbone(candidate, &samples)?;
        groups.push(GroupReport {
            group: name.to_string(),
            n_tasks: indices.len(),
            n_samples: samples.len(),
            baseline: base_metrics,
            candidate: cand_metrics,
            acc_gain_pct: relative_gain(base_metrics.acc, cand_metrics.acc),
            mcc_gain_pct: relative_gain(base_metrics.mcc, cand_metrics.mcc),
            f1_gain_pct: relative_gain(base_metrics.f1, cand_metrics.f1),
        });
    }
    Ok(TercileReport { groups })
}
