use super::features::make_samples;
use super::{Sample, SplitConfig, StockSeries};
use crate::error::{Error, Result};
use crate::par;

/// Sample pools produced by [`split_population`]. Pairwise disjoint by
/// `(symbol, anchor_date)`.
#[derive(Clone, Debug, Default)]
pub struct SplitSamples {
    pub old: Vec<Sample>,
    pub subnew_train: Vec<Sample>,
    pub subnew_val: Vec<Sample>,
    pub subnew_test: Vec<Sample>,
}

/// Route every series' samples into the old pool or the sub-new
/// train/val/test pools.
///
/// A series is sub-new iff its listing date falls inside the sub-new window
/// (start of training range through end of test range). Sub-new samples are
/// assigned purely by anchor date; old samples are kept only when their
/// anchor date lies in the old range. Samples outside every range are
/// dropped.
pub fn split_population(
    all: &[StockSeries],
    cfg: &SplitConfig,
    window: usize,
) -> Result<SplitSamples> {
    cfg.validate()?;
    let subnew_window = cfg.subnew_window();

    let mut n_old_series = 0usize;
    let mut n_subnew_series = 0usize;
    for series in all {
        if subnew_window.contains(series.listing_date) {
            n_subnew_series += 1;
        } else {
            n_old_series += 1;
        }
    }
    if n_old_series == 0 {
        return Err(Error::EmptyPopulation {
            population: "old".into(),
        });
    }
    if n_subnew_series == 0 {
        return Err(Error::EmptyPopulation {
            population: "sub-new".into(),
        });
    }

    let per_series: Vec<Vec<Sample>> = par::map_ordered(all, |series| {
        make_samples(series, window, cfg.pos_threshold, cfg.neg_threshold)
    });

    let mut out = SplitSamples::default();
    for (series, samples) in all.iter().zip(per_series) {
        let is_subnew = subnew_window.contains(series.listing_date);
        for sample in samples {
            if is_subnew {
                if cfg.subnew_train.contains(sample.anchor_date) {
                    out.subnew_train.push(sample);
                } else if cfg.subnew_val.contains(sample.anchor_date) {
                    out.subnew_val.push(sample);
                } else if cfg.subnew_test.contains(sample.anchor_date) {
                    out.subnew_test.push(sample);
                }
            } else if cfg.old_range.contains(sample.anchor_date) {
                out.old.push(sample);
            }
        }
    }

    if out.old.is_empty() {
        return Err(Error::EmptyPopulation {
            population: "old sample".into(),
        });
    }
    if out.subnew_train.is_empty() || out.subnew_val.is_empty() || out.subnew_test.is_empty() {
        return Err(Error::EmptyPopulation {
            population: "sub-new sample".into(),
        });
    }
    Ok(out)
}
