use chrono::NaiveDate;

use super::{FeatureMatrix, Sample, StockSeries};

/// Per-day feature dimension: log-return of the adjusted close and
/// log-difference of smoothed volume.
pub const FEATURE_DIM: usize = 2;

/// Dated per-day feature vectors. Day `i` here corresponds to series row
/// `i + 1`, since both features are differences against the previous day.
#[derive(Clone, Debug)]
pub struct FeatureSeries {
    pub dim: usize,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Compute per-day features. Fewer than 2 rows yields an empty series.
pub fn compute_features(series: &StockSeries) -> FeatureSeries {
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for pair in series.rows.windows(2) {
        let prev = &pair[0];
        let cur = &pair[1];
        let price_ret = (cur.adj_close / prev.adj_close).ln();
        // +1 smoothing keeps zero-volume days finite.
        let volume_ret = ((cur.volume + 1.0) / (prev.volume + 1.0)).ln();
        dates.push(cur.date);
        rows.push(vec![price_ret, volume_ret]);
    }
    FeatureSeries {
        dim: FEATURE_DIM,
        dates,
        rows,
    }
}

/// Z-score each column in place using the sample (n-1) standard deviation.
/// A zero-variance column maps to all zeros.
fn zscore_columns(matrix: &mut FeatureMatrix) {
    let rows = matrix.rows();
    let cols = matrix.cols();
    if rows < 2 {
        return;
    }
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..rows {
            mean += matrix.get(r, c);
        }
        mean /= rows as f64;
        let mut ss = 0.0;
        for r in 0..rows {
            let dev = matrix.get(r, c) - mean;
            ss += dev * dev;
        }
        if ss == 0.0 {
            for r in 0..rows {
                matrix.set(r, c, 0.0);
            }
        } else {
            let std = (ss / (rows as f64 - 1.0)).sqrt();
            for r in 0..rows {
                matrix.set(r, c, (matrix.get(r, c) - mean) / std);
            }
        }
    }
}

/// Generate labeled sliding-window samples.
///
/// A sample anchored at row `t` holds the feature rows for days
/// `t-window+1 ..= t`, z-scored per column, and is labeled by the next-day
/// movement of the adjusted close: 1 at or above `pos_th` percent, 0 at or
/// below `neg_th` percent, discarded in between. Series shorter than
/// `window + 2` rows yield an empty list.
pub fn make_samples(series: &StockSeries, window: usize, pos_th: f64, neg_th: f64) -> Vec<Sample> {
    assert!(window >= 2, "window length must be at least 2");
    let features = compute_features(series);
    let n = series.rows.len();
    let mut samples = Vec::new();
    if n < window + 2 {
        return samples;
    }
    // A feature row exists for each series row index >= 1; sample anchors
    // need `window` feature rows ending at the anchor and a next-day close.
    for t in window..=(n - 2) {
        let mut data = Vec::with_capacity(window * features.dim);
        for fi in (t - window)..t {
            data.extend_from_slice(&features.rows[fi]);
        }
        let mut matrix = FeatureMatrix::new(window, features.dim, data).expect("window shape");
        zscore_columns(&mut matrix);

        let close_t = series.rows[t].adj_close;
        let close_next = series.rows[t + 1].adj_close;
        let movement_pct = 100.0 * (close_next - close_t) / close_t;
        let label = if movement_pct >= pos_th {
            1
        } else if movement_pct <= neg_th {
            0
        } else {
            continue;
        };
        samples.push(Sample {
            symbol: series.symbol.clone(),
            anchor_date: series.rows[t].date,
            features: matrix,
            label,
            movement_pct,
            difficulty: 0.0,
        });
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::PriceRow;
    use approx::assert_relative_eq;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn series_from(prices: &[f64], volumes: &[f64]) -> StockSeries {
        let start = d("2021-01-01");
        let rows: Vec<PriceRow> = prices
            .iter()
            .zip(volumes)
            .enumerate()
            .map(|(i, (&p, &v))| PriceRow {
                date: start + chrono::Days::new(i as u64),
                open: p,
                high: p,
                low: p,
                close: p,
                adj_close: p,
                volume: v,
            })
            .collect();
        StockSeries::new("TST".into(), start, rows).unwrap()
    }

    #[test]
    fn constant_series_gives_zero_features() {
        let s = series_from(&[10.0; 5], &[100.0; 5]);
        let f = compute_features(&s);
        assert_eq!(f.len(), 4);
        for row in &f.rows {
            assert_eq!(row, &vec![0.0, 0.0]);
        }
    }

    #[test]
    fn doubling_price_gives_ln_two() {
        let s = series_from(&[10.0, 20.0], &[100.0, 100.0]);
        let f = compute_features(&s);
        assert_relative_eq!(f.rows[0][0], std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn zero_volume_days_stay_finite() {
        let s = series_from(&[10.0, 10.0], &[0.0, 0.0]);
        let f = compute_features(&s);
        assert_eq!(f.rows[0][1], 0.0);
        assert!(f.rows[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_row_series_gives_empty_features() {
        let s = series_from(&[10.0], &[100.0]);
        assert!(compute_features(&s).is_empty());
    }

    #[test]
    fn movement_at_positive_threshold_labels_one() {
        // 10000 -> 10055 is exactly +0.55%.
        let s = series_from(&[10000.0, 10000.0, 10000.0, 10055.0], &[100.0; 4]);
        let samples = make_samples(&s, 2, 0.55, -0.5);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].label, 1);
        assert!(samples[0].movement_pct >= 0.55);
    }

    #[test]
    fn movement_at_negative_threshold_labels_zero() {
        // 10000 -> 9950 is exactly -0.5%.
        let s = series_from(&[10000.0, 10000.0, 10000.0, 9950.0], &[100.0; 4]);
        let samples = make_samples(&s, 2, 0.55, -0.5);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].label, 0);
    }

    #[test]
    fn small_movement_is_filtered_out() {
        // 10000 -> 10010 is exactly +0.10%.
        let s = series_from(&[10000.0, 10000.0, 10000.0, 10010.0], &[100.0; 4]);
        let samples = make_samples(&s, 2, 0.55, -0.5);
        assert!(samples.is_empty());
    }

    #[test]
    fn short_series_gives_empty_list() {
        let s = series_from(&[10.0, 11.0, 12.0], &[100.0; 3]);
        assert!(make_samples(&s, 2, 0.55, -0.5).is_empty());
    }

    #[test]
    fn windows_are_zscored_per_column() {
        let s = series_from(
            &[100.0, 103.0, 99.0, 107.0, 95.0, 104.0, 110.0],
            &[1000.0, 1200.0, 900.0, 1500.0, 800.0, 1300.0, 1250.0],
        );
        let samples = make_samples(&s, 4, 0.1, -0.1);
        assert!(!samples.is_empty());
        for sample in &samples {
            let m = &sample.features;
            assert_eq!(m.rows(), 4);
            assert_eq!(m.cols(), 2);
            for c in 0..m.cols() {
                let col = m.column(c);
                let mean: f64 = col.iter().sum::<f64>() / col.len() as f64;
                assert!(mean.abs() < 1e-9);
                let var: f64 =
                    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() as f64 - 1.0);
                let std = var.sqrt();
                assert!((std - 1.0).abs() < 1e-9 || std == 0.0, "std = {std}");
            }
        }
    }

    #[test]
    fn zero_variance_column_maps_to_zeros() {
        // Constant volume makes the volume feature column identically zero,
        // which has zero variance inside every window.
        let s = series_from(&[100.0, 103.0, 99.0, 107.0, 95.0, 104.0], &[1000.0; 6]);
        let samples = make_samples(&s, 3, 0.1, -0.1);
        assert!(!samples.is_empty());
        for sample in &samples {
            assert!(sample.features.column(1).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn labels_respect_thresholds_on_random_series() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(
                &(
                    proptest::collection::vec(0.01f64..0.2, 12..60),
                    proptest::collection::vec(0.0f64..1e6, 12..60),
                ),
                |(moves, volumes)| {
                    let n = moves.len().min(volumes.len());
                    let mut price = 100.0;
                    let mut prices = Vec::with_capacity(n);
                    for (i, m) in moves[..n].iter().enumerate() {
                        price *= if i % 3 == 0 { 1.0 + m } else { 1.0 - m / 2.0 };
                        prices.push(price);
                    }
                    let s = series_from(&prices, &volumes[..n]);
                    for sample in make_samples(&s, 4, 0.55, -0.5) {
                        prop_assert!(sample.features.as_slice().iter().all(|v| v.is_finite()));
                        prop_assert_eq!(sample.features.rows(), 4);
                        prop_assert_eq!(sample.features.cols(), 2);
                        match sample.label {
                            1 => prop_assert!(sample.movement_pct >= 0.55),
                            0 => prop_assert!(sample.movement_pct <= -0.5),
                            other => prop_assert!(false, "label {}", other),
                        }
                    }
                    Ok(())
                },
            )
            .unwrap();
    }

    #[test]
    fn no_lookahead_in_features_or_label() {
        let prices = [100.0, 103.0, 99.0, 107.0, 95.0, 104.0, 110.0, 101.0];
        let volumes = [1000.0, 1200.0, 900.0, 1500.0, 800.0, 1300.0, 1250.0, 1400.0];
        let full = series_from(&prices, &volumes);
        let samples_full = make_samples(&full, 3, 0.1, -0.1);
        // Truncate right after the label day of the first anchor (t = 3):
        // the sample must be unchanged.
        let truncated = series_from(&prices[..5], &volumes[..5]);
        let samples_trunc = make_samples(&truncated, 3, 0.1, -0.1);
        let first_full = samples_full
            .iter()
            .find(|s| s.anchor_date == d("2021-01-04"))
            .unwrap();
        let first_trunc = samples_trunc
            .iter()
            .find(|s| s.anchor_date == d("2021-01-04"))
            .unwrap();
        assert_eq!(first_full.features, first_trunc.features);
        assert_eq!(first_full.label, first_trunc.label);
        assert_eq!(first_full.movement_pct, first_trunc.movement_pct);
    }
}
