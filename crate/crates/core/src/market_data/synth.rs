use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PriceRow, StockSeries};
use crate::error::{Error, Result};

/// Path regime for synthetic series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Positive drift with Gaussian noise.
    Trend,
    /// Log-price mean-reverts toward its starting level.
    MeanRevert,
    /// Embeds a learnable motif: after two consecutive up-returns the next
    /// return is up with probability 0.9, after two consecutive
    /// down-returns it is down with probability 0.9. Series alternate
    /// between two persistent styles for their sign-mixed states:
    /// even-indexed (trendy) series continue the latest direction with
    /// probability 0.65, odd-indexed (choppy) series reverse it with
    /// probability 0.65. Choppy series therefore alternate in bursts and
    /// their windows carry a weaker, context-dependent signal on top of
    /// the shared run motif. Return magnitudes always clear the default
    /// labeling thresholds, so labels are never filtered.
    Planted,
}

impl Regime {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "trend" => Ok(Self::Trend),
            "meanrevert" => Ok(Self::MeanRevert),
            "planted" => Ok(Self::Planted),
            other => Err(Error::InvalidArgument(format!(
                "unknown regime `{other}` (expected trend, meanrevert or planted)"
            ))),
        }
    }
}

const MOTIF_PROB: f64 = 0.9;
const STYLE_PROB: f64 = 0.65;
const PLANTED_MIN_MOVE: f64 = 0.006;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn log_return(
    regime: Regime,
    rng: &mut ChaCha8Rng,
    log_dev: f64,
    prev: [f64; 2],
    choppy: bool,
) -> f64 {
    match regime {
        Regime::Trend => 0.002 + 0.01 * standard_normal(rng),
        Regime::MeanRevert => -0.1 * log_dev + 0.01 * standard_normal(rng),
        Regime::Planted => {
            let magnitude = PLANTED_MIN_MOVE + 0.01 * standard_normal(rng).abs();
            let up_prob = if prev[0] > 0.0 && prev[1] > 0.0 {
                MOTIF_PROB
            } else if prev[0] < 0.0 && prev[1] < 0.0 {
                1.0 - MOTIF_PROB
            } else if prev[1] != 0.0 {
                // Mixed state: trendy series continue the latest move,
                // choppy series reverse it.
                let continue_prob = if choppy { 1.0 - STYLE_PROB } else { STYLE_PROB };
                if prev[1] > 0.0 {
                    continue_prob
                } else {
                    1.0 - continue_prob
                }
            } else {
                0.5
            };
            if rng.gen_range(0.0..1.0) < up_prob {
                magnitude
            } else {
                -magnitude
            }
        }
    }
}

/// Deterministic synthetic series starting 2018-01-02 with symbols SYN000..
pub fn synthesize(
    n_series: usize,
    n_days: usize,
    regime: Regime,
    seed: u64,
) -> Result<Vec<StockSeries>> {
    synthesize_from(
        n_series,
        n_days,
        regime,
        seed,
        NaiveDate::from_ymd_opt(2018, 1, 2).unwrap(),
        "SYN",
    )
}

/// Synthesize `n_series` series of `n_days` consecutive calendar days
/// starting at `start`. Identical arguments produce bit-identical output.
pub fn synthesize_from(
    n_series: usize,
    n_days: usize,
    regime: Regime,
    seed: u64,
    start: NaiveDate,
    symbol_prefix: &str,
) -> Result<Vec<StockSeries>> {
    if n_days < 30 {
        return Err(Error::InvalidArgument(format!(
            "synthetic series need at least 30 days, got {n_days}"
        )));
    }
    let mut out = Vec::with_capacity(n_series);
    for i in 0..n_series {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let base_price: f64 = 20.0 + 180.0 * rng.gen_range(0.0..1.0);
        let base_volume: f64 = 1.0e5 * (1.0 + 9.0 * rng.gen_range(0.0..1.0));
        let base_log = base_price.ln();

        let choppy = i % 2 == 1;
        let mut log_price = base_log;
        let mut prev_returns = [0.0f64; 2];
        let mut prev_close = base_price;
        // Volume drifts smoothly: AR(1) on the log-volume increment keeps
        // its day-over-day changes persistent rather than white.
        let mut log_volume = base_volume.ln();
        let mut volume_drift = 0.0;
        let mut rows = Vec::with_capacity(n_days);
        for day in 0..n_days {
            let ret = if day == 0 {
                0.0
            } else {
                log_return(regime, &mut rng, log_price - base_log, prev_returns, choppy)
            };
            log_price += ret;
            prev_returns = [prev_returns[1], ret];
            let close = log_price.exp();
            let open = prev_close;
            let spread = 1.0 + 0.002 * standard_normal(&mut rng).abs();
            let high = open.max(close) * spread;
            let low = open.min(close) / spread;
            volume_drift = 0.9 * volume_drift + 0.1 * standard_normal(&mut rng);
            log_volume += 0.05 * volume_drift;
            let volume = log_volume.exp().round();
            rows.push(PriceRow {
                date: start + Days::new(day as u64),
                open,
                high,
                low,
                close,
                adj_close: close,
                volume,
            });
            prev_close = close;
        }
        out.push(StockSeries::new(
            format!("{symbol_prefix}{i:03}"),
            start,
            rows,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_bit_identical_series() {
        let a = synthesize(3, 60, Regime::Planted, 42).unwrap();
        let b = synthesize(3, 60, Regime::Planted, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.symbol, y.symbol);
            assert_eq!(x.rows, y.rows);
        }
        let c = synthesize(3, 60, Regime::Planted, 43).unwrap();
        assert_ne!(a[0].rows, c[0].rows);
    }

    #[test]
    fn planted_motif_frequency_matches_conditional() {
        // ~24k days so the motif occurs well over 10k times.
        let series = synthesize(24, 1000, Regime::Planted, 7).unwrap();
        let mut motif = 0usize;
        let mut motif_up = 0usize;
        for s in &series {
            let returns: Vec<f64> = s
                .rows
                .windows(2)
                .map(|p| (p[1].adj_close / p[0].adj_close).ln())
                .collect();
            for w in returns.windows(3) {
                if w[0] > 0.0 && w[1] > 0.0 {
                    motif += 1;
                    if w[2] > 0.0 {
                        motif_up += 1;
                    }
                }
            }
        }
        assert!(motif > 5000, "only {motif} motif occurrences");
        let freq = motif_up as f64 / motif as f64;
        assert!(
            (freq - 0.9).abs() <= 0.02,
            "conditional up-frequency {freq}"
        );
    }

    #[test]
    fn planted_series_split_into_trendy_and_choppy_styles() {
        let series = synthesize(24, 1000, Regime::Planted, 7).unwrap();
        let mut trendy = 0usize;
        let mut choppy = 0usize;
        let mut ups = 0usize;
        let mut total = 0usize;
        for s in &series {
            let returns: Vec<f64> = s
                .rows
                .windows(2)
                .map(|p| (p[1].adj_close / p[0].adj_close).ln())
                .collect();
            let mut mixed = 0usize;
            let mut continued = 0usize;
            for w in returns.windows(3) {
                if w[0] * w[1] < 0.0 {
                    mixed += 1;
                    if w[2] * w[1] > 0.0 {
                        continued += 1;
                    }
                }
            }
            let freq = continued as f64 / mixed as f64;
            if (freq - 0.65).abs() <= 0.11 {
                trendy += 1;
            } else if (freq - 0.35).abs() <= 0.11 {
                choppy += 1;
            } else {
                panic!(
                    "{}: mixed-state continuation {freq} fits neither style",
                    s.symbol
                );
            }
            for r in &returns[1..] {
                total += 1;
                if *r > 0.0 {
                    ups += 1;
                }
            }
        }
        assert_eq!((trendy, choppy), (12, 12), "styles {trendy}/{choppy}");
        // The mirrored conditionals keep the classes balanced.
        let up_rate = ups as f64 / total as f64;
        assert!((up_rate - 0.5).abs() <= 0.03, "up rate {up_rate}");
    }

    #[test]
    fn trend_regime_has_positive_mean_log_return() {
        let series = synthesize(4, 1000, Regime::Trend, 5).unwrap();
        for s in &series {
            let total: f64 = (s.rows.last().unwrap().adj_close / s.rows[0].adj_close).ln();
            let mean = total / (s.rows.len() as f64 - 1.0);
            assert!(mean > 0.0, "mean log-return {mean} for {}", s.symbol);
        }
    }

    #[test]
    fn planted_moves_always_clear_default_thresholds() {
        let series = synthesize(2, 200, Regime::Planted, 9).unwrap();
        for s in &series {
            for p in s.rows.windows(2) {
                let pct = 100.0 * (p[1].adj_close - p[0].adj_close) / p[0].adj_close;
                assert!(
                    pct >= 0.55 || pct <= -0.5,
                    "movement {pct} would be filtered"
                );
            }
        }
    }

    #[test]
    fn too_few_days_is_an_error() {
        assert!(synthesize(1, 10, Regime::Trend, 1).is_err());
    }
}
