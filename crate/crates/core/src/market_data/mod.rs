//! OHLCV ingestion, feature engineering, sample generation and population
//! splitting.

mod csv_io;
mod features;
mod split;
mod synth;

pub use csv_io::{
    apply_listing_dates, load_csv, load_csv_with_report, load_listing_dates, write_csv,
    write_listing_sidecar, CsvSchema, IngestReport,
};
pub use features::{compute_features, make_samples, FeatureSeries, FEATURE_DIM};
pub use split::{split_population, SplitSamples};
pub use synth::{synthesize, synthesize_from, Regime};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trading day of an instrument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

impl PriceRow {
    fn validate(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close, self.adj_close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(format!("non-positive or non-finite price on {}", self.date));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("negative or non-finite volume on {}", self.date));
        }
        Ok(())
    }
}

/// One instrument's dated OHLCV record. Rows are strictly increasing in
/// date, all prices positive, volume non-negative.
#[derive(Clone, Debug)]
pub struct StockSeries {
    pub symbol: String,
    pub listing_date: NaiveDate,
    pub rows: Vec<PriceRow>,
}

impl StockSeries {
    /// Build a validated series. `rows` must already be sorted by date.
    pub fn new(symbol: String, listing_date: NaiveDate, rows: Vec<PriceRow>) -> Result<Self> {
        for row in &rows {
            row.validate().map_err(|message| Error::InvalidSeries {
                symbol: symbol.clone(),
                message,
            })?;
        }
        for pair in rows.windows(2) {
            if pair[1].date == pair[0].date {
                return Err(Error::DuplicateDate {
                    symbol,
                    date: pair[0].date,
                });
            }
            if pair[1].date < pair[0].date {
                return Err(Error::InvalidSeries {
                    symbol,
                    message: format!("rows out of order at {}", pair[1].date),
                });
            }
        }
        Ok(Self {
            symbol,
            listing_date,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Dense row-major matrix of per-day feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

/// A labeled feature window anchored at its last feature day.
#[derive(Clone, Debug)]
pub struct Sample {
    pub symbol: String,
    pub anchor_date: NaiveDate,
    /// U x d window, z-scored per column.
    pub features: FeatureMatrix,
    /// 1 = movement at or above the positive threshold, 0 = at or below
    /// the negative threshold.
    pub label: u8,
    /// Signed next-day movement of the adjusted close, in percent.
    pub movement_pct: f64,
    /// Volatility score, filled in by the wavelet module.
    pub difficulty: f64,
}

/// Inclusive calendar range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn n_days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

/// Date ranges and movement thresholds that define the old / sub-new
/// populations and the sub-new train/val/test splits.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitConfig {
    pub old_range: DateRange,
    pub subnew_train: DateRange,
    pub subnew_val: DateRange,
    pub subnew_test: DateRange,
    /// Movement percentage at or above which a sample is labeled 1.
    pub pos_threshold: f64,
    /// Movement percentage at or below which a sample is labeled 0.
    pub neg_threshold: f64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("old", self.old_range),
            ("subnew_train", self.subnew_train),
            ("subnew_val", self.subnew_val),
            ("subnew_test", self.subnew_test),
        ];
        for (name, range) in &ranges {
            if range.start > range.end {
                return Err(Error::InvalidSplit(format!(
                    "{name} range starts after it ends ({} > {})",
                    range.start, range.end
                )));
            }
        }
        for pair in ranges.windows(2) {
            let (a_name, a) = pair[0];
            let (b_name, b) = pair[1];
            if a.end >= b.start {
                return Err(Error::InvalidSplit(format!(
                    "{a_name} range must end before {b_name} range starts ({} >= {})",
                    a.end, b.start
                )));
            }
        }
        if !self.pos_threshold.is_finite() || self.pos_threshold <= 0.0 {
            return Err(Error::InvalidSplit(format!(
                "pos_threshold must be > 0, got {}",
                self.pos_threshold
            )));
        }
        if !self.neg_threshold.is_finite() || self.neg_threshold >= 0.0 {
            return Err(Error::InvalidSplit(format!(
                "neg_threshold must be < 0, got {}",
                self.neg_threshold
            )));
        }
        Ok(())
    }

    /// Window that makes a series sub-new: a listing date anywhere from the
    /// start of sub-new training data to the end of sub-new test data.
    pub fn subnew_window(&self) -> DateRange {
        DateRange::new(self.subnew_train.start, self.subnew_test.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn row(date: &str, price: f64) -> PriceRow {
        PriceRow {
            date: d(date),
            open: price,
            high: price,
            low: price,
            close: price,
            adj_close: price,
            volume: 1000.0,
        }
    }

    #[test]
    fn series_rejects_duplicate_dates() {
        let rows = vec![row("2021-01-04", 10.0), row("2021-01-04", 11.0)];
        let err = StockSeries::new("AAA".into(), d("2021-01-04"), rows).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("AAA") && msg.contains("2021-01-04"), "{msg}");
    }

    #[test]
    fn series_rejects_non_positive_prices() {
        let mut bad = row("2021-01-04", 10.0);
        bad.adj_close = 0.0;
        assert!(StockSeries::new("AAA".into(), d("2021-01-04"), vec![bad]).is_err());
    }

    #[test]
    fn split_config_requires_ordered_ranges() {
        let cfg = SplitConfig {
            old_range: DateRange::new(d("2020-01-01"), d("2020-12-31")),
            subnew_train: DateRange::new(d("2020-12-01"), d("2021-03-31")),
            subnew_val: DateRange::new(d("2021-04-01"), d("2021-04-30")),
            subnew_test: DateRange::new(d("2021-05-01"), d("2021-06-30")),
            pos_threshold: 0.55,
            neg_threshold: -0.5,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_config_requires_signed_thresholds() {
        let mut cfg = SplitConfig {
            old_range: DateRange::new(d("2020-01-01"), d("2020-12-31")),
            subnew_train: DateRange::new(d("2021-01-01"), d("2021-03-31")),
            subnew_val: DateRange::new(d("2021-04-01"), d("2021-04-30")),
            subnew_test: DateRange::new(d("2021-05-01"), d("2021-06-30")),
            pos_threshold: 0.55,
            neg_threshold: -0.5,
        };
        assert!(cfg.validate().is_ok());
        cfg.neg_threshold = 0.1;
        assert!(cfg.validate().is_err());
    }
}
