//! Long-only signal-following strategy simulation and the six trading
//! metrics derived from its equity curve.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::StockSeries;

/// A dated per-symbol direction signal: `up` means the model predicts a
/// rise for the next day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub date: NaiveDate,
    pub symbol: String,
    pub up: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub date: NaiveDate,
    pub equity: f64,
    pub daily_return: f64,
    pub n_positions: usize,
}

/// Dated equity/position record of one strategy run. Equity starts at 1.0;
/// `equity[t] = equity[t-1] * (1 + daily_return[t])`.
#[derive(Clone, Debug, Default)]
pub struct TradeLedger {
    pub entries: Vec<LedgerEntry>,
}

impl TradeLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn final_equity(&self) -> f64 {
        self.entries.last().map(|e| e.equity).unwrap_or(1.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StrategyConfig {
    /// Transaction cost in basis points charged per position change on the
    /// changed slice of capital. The default of zero matches a frictionless
    /// market.
    pub cost_bps: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self { cost_bps: 0.0 }
    }
}

/// Simulate the strategy: enter a symbol long at the close of an up-signal
/// date when flat, exit at the close of a down-signal date when held.
/// Capital is split equally across concurrently held symbols and the daily
/// portfolio return is the mean of the held symbols' close-to-close returns
/// (zero when flat).
pub fn run_strategy(
    signals: &[Signal],
    prices: &[StockSeries],
    cfg: &StrategyConfig,
) -> Result<TradeLedger> {
    if signals.is_empty() {
        return Err(Error::EmptyInput("strategy without signals"));
    }
    let mut closes: HashMap<&str, BTreeMap<NaiveDate, f64>> = HashMap::new();
    for series in prices {
        let by_date = closes.entry(series.symbol.as_str()).or_default();
        for row in &series.rows {
            by_date.insert(row.date, row.adj_close);
        }
    }
    for signal in signals {
        let has_price = closes
            .get(signal.symbol.as_str())
            .map(|m| m.contains_key(&signal.date))
            .unwrap_or(false);
        if !has_price {
            return Err(Error::MissingPrice {
                symbol: signal.symbol.clone(),
                date: signal.date,
            });
        }
    }

    let mut signals_by_date: BTreeMap<NaiveDate, Vec<&Signal>> = BTreeMap::new();
    for signal in signals {
        signals_by_date.entry(signal.date).or_default().push(signal);
    }
    for batch in signals_by_date.values_mut() {
        batch.sort_by(|a, b| a.symbol.cmp(&b.symbol));
    }
    let first_date = *signals_by_date.keys().next().unwrap();

    // Trading calendar: every price date of an involved symbol from the
    // first signal onward.
    let involved: BTreeSet<&str> = signals.iter().map(|s| s.symbol.as_str()).collect();
    let mut calendar: BTreeSet<NaiveDate> = BTreeSet::new();
    for symbol in &involved {
        for date in closes[symbol].keys() {
            if *date >= first_date {
                calendar.insert(*date);
            }
        }
    }

    let cost_rate = cfg.cost_bps / 10_000.0;
    let mut held: BTreeSet<&str> = BTreeSet::new();
    let mut last_close: HashMap<&str, f64> = HashMap::new();
    let mut equity = 1.0;
    let mut entries = Vec::with_capacity(calendar.len());

    for date in calendar {
        // Returns accrue on positions held coming into this date.
        let mut sum = 0.0;
        let mut contributing = 0usize;
        for &symbol in held.iter() {
            if let Some(&close) = closes[symbol].get(&date) {
                let prev = last_close[symbol];
                sum += close / prev - 1.0;
                contributing += 1;
                last_close.insert(symbol, close);
            }
        }
        let mut daily_return = if contributing > 0 {
            sum / contributing as f64
        } else {
            0.0
        };

        // Position changes happen at this date's close.
        if let Some(batch) = signals_by_date.get(&date) {
            for signal in batch {
                let symbol = signal.symbol.as_str();
                if signal.up && !held.contains(symbol) {
                    held.insert(symbol);
                    last_close.insert(symbol, closes[symbol][&date]);
                    if cost_rate > 0.0 {
                        daily_return -= cost_rate / held.len() as f64;
                    }
                } else if !signal.up && held.contains(symbol) {
                    let n_before = held.len();
                    held.remove(symbol);
                    last_close.remove(symbol);
                    if cost_rate > 0.0 {
                        daily_return -= cost_rate / n_before as f64;
                    }
                }
            }
        }

        equity *= 1.0 + daily_return;
        entries.push(LedgerEntry {
            date,
            equity,
            daily_return,
            n_positions: held.len(),
        });
    }
    Ok(TradeLedger { entries })
}

/// Which metric denominators degenerated to zero (the metric itself is
/// reported as 0 in that case).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub sharpe: bool,
    pub sortino: bool,
    pub calmar: bool,
    pub omega: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.sharpe || self.sortino || self.calmar || self.omega
    }
}

/// The six trading metrics with a 252-day annualization and zero risk-free
/// rate / return thresholds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TradingMetrics {
    /// Annualized return ratio.
    pub arr: f64,
    /// Sharpe ratio.
    pub sharpe: f64,
    /// Maximum drawdown (non-positive).
    pub max_drawdown: f64,
    /// Sortino ratio.
    pub sortino: f64,
    /// Calmar ratio.
    pub calmar: f64,
    /// Omega ratio.
    pub omega: f64,
    pub degenerate: DegenerateFlags,
}

const TRADING_DAYS: f64 = 252.0;

pub fn trading_metrics(ledger: &TradeLedger) -> Result<TradingMetrics> {
    let n = ledger.entries.len();
    if n < 2 {
        return Err(Error::LedgerTooShort { n });
    }
    let equity: Vec<f64> = ledger.entries.iter().map(|e| e.equity).collect();
    let returns: Vec<f64> = ledger.entries[1..].iter().map(|e| e.daily_return).collect();
    let n_returns = returns.len() as f64;
    let mut flags = DegenerateFlags::default();

    let arr = (equity[n - 1] / equity[0]).powf(TRADING_DAYS / n_returns) - 1.0;

    let mean = returns.iter().sum::<f64>() / n_returns;
    let sharpe = if returns.len() < 2 {
        flags.sharpe = true;
        0.0
    } else {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n_returns - 1.0);
        let std = var.sqrt();
        if std == 0.0 {
            flags.sharpe = true;
            0.0
        } else {
            mean / std * TRADING_DAYS.sqrt()
        }
    };

    let mut peak = f64::MIN;
    let mut max_drawdown = 0.0f64;
    for &e in &equity {
        peak = peak.max(e);
        max_drawdown = max_drawdown.min((e - peak) / peak);
    }

    let downside = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n_returns).sqrt();
    let sortino = if downside == 0.0 {
        flags.sortino = true;
        0.0
    } else {
        mean / downside * TRADING_DAYS.sqrt()
    };

    let calmar = if max_drawdown == 0.0 {
        flags.calmar = true;
        0.0
    } else {
        arr / max_drawdown.abs()
    };

    let gains: f64 = returns.iter().map(|r| r.max(0.0)).sum();
    let losses: f64 = returns.iter().map(|r| (-r).max(0.0)).sum();
    let omega = if losses == 0.0 {
        flags.omega = true;
        0.0
    } else {
        gains / losses
    };

    Ok(TradingMetrics {
        arr,
        sharpe,
        max_drawdown,
        sortino,
        calmar,
        omega,
        degenerate: flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::PriceRow;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn series(symbol: &str, start: &str, closes: &[f64]) -> StockSeries {
        let start = d(start);
        let rows: Vec<PriceRow> = closes
            .iter()
            .enumerate()
            .map(|(i, &c)| PriceRow {
                date: start + chrono::Days::new(i as u64),
                open: c,
                high: c,
                low: c,
                close: c,
                adj_close: c,
                volume: 1000.0,
            })
            .collect();
        StockSeries::new(symbol.into(), start, rows).unwrap()
    }

    fn ledger_from_equity(equity: &[f64]) -> TradeLedger {
        let start = d("2021-01-01");
        let entries: Vec<LedgerEntry> = equity
            .iter()
            .enumerate()
            .map(|(i, &e)| LedgerEntry {
                date: start + chrono::Days::new(i as u64),
                equity: e,
                daily_return: if i == 0 { 0.0 } else { e / equity[i - 1] - 1.0 },
                n_positions: 1,
            })
            .collect();
        TradeLedger { entries }
    }

    #[test]
    fn all_down_signals_stay_flat_forever() {
        let prices = vec![series("AAA", "2021-01-01", &[100.0, 101.0, 99.0, 102.0])];
        let signals: Vec<Signal> = (0..4)
            .map(|i| Signal {
                date: d("2021-01-01") + chrono::Days::new(i),
                symbol: "AAA".into(),
                up: false,
            })
            .collect();
        let ledger = run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap();
        assert!(ledger.entries.iter().all(|e| e.equity == 1.0));
        assert!(ledger.entries.iter().all(|e| e.n_positions == 0));
    }

    #[test]
    fn single_buy_then_sell_earns_the_move() {
        let prices = vec![series("AAA", "2021-01-01", &[100.0, 110.0])];
        let signals = vec![
            Signal {
                date: d("2021-01-01"),
                symbol: "AAA".into(),
                up: true,
            },
            Signal {
                date: d("2021-01-02"),
                symbol: "AAA".into(),
                up: false,
            },
        ];
        let ledger = run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap();
        assert_relative_eq!(ledger.final_equity(), 1.10, max_relative = 1e-12);
        assert_eq!(ledger.entries.last().unwrap().n_positions, 0);
    }

    #[test]
    fn alternating_signals_compose_held_period_returns() {
        // Hold days 1-2 and 3-4; the equity must be the product of the
        // held-period gross returns: (104/100) * (108/99).
        let closes = [100.0, 104.0, 99.0, 108.0, 95.0];
        let prices = vec![series("AAA", "2021-01-01", &closes)];
        let ups = [true, false, true, false, false];
        let signals: Vec<Signal> = ups
            .iter()
            .enumerate()
            .map(|(i, &up)| Signal {
                date: d("2021-01-01") + chrono::Days::new(i as u64),
                symbol: "AAA".into(),
                up,
            })
            .collect();
        let ledger = run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap();
        let expected = (104.0 / 100.0) * (108.0 / 99.0);
        assert_relative_eq!(ledger.final_equity(), expected, max_relative = 1e-12);
    }

    #[test]
    fn capital_splits_equally_across_concurrent_positions() {
        let prices = vec![
            series("AAA", "2021-01-01", &[100.0, 110.0]),
            series("BBB", "2021-01-01", &[50.0, 45.0]),
        ];
        let signals = vec![
            Signal {
                date: d("2021-01-01"),
                symbol: "AAA".into(),
                up: true,
            },
            Signal {
                date: d("2021-01-01"),
                symbol: "BBB".into(),
                up: true,
            },
        ];
        let ledger = run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap();
        // Mean of +10% and -10%.
        assert_relative_eq!(ledger.final_equity(), 1.0, max_relative = 1e-12);
        assert_eq!(ledger.entries.last().unwrap().n_positions, 2);
    }

    #[test]
    fn missing_price_on_signal_date_is_an_error() {
        let prices = vec![series("AAA", "2021-01-01", &[100.0, 110.0])];
        let signals = vec![Signal {
            date: d("2021-02-01"),
            symbol: "AAA".into(),
            up: true,
        }];
        let err = run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("AAA") && msg.contains("2021-02-01"), "{msg}");
    }

    #[test]
    fn transaction_costs_reduce_equity() {
        let prices = vec![series("AAA", "2021-01-01", &[100.0, 110.0])];
        let signals = vec![
            Signal {
                date: d("2021-01-01"),
                symbol: "AAA".into(),
                up: true,
            },
            Signal {
                date: d("2021-01-02"),
                symbol: "AAA".into(),
                up: false,
            },
        ];
        let free = run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap();
        let costly = run_strategy(&signals, &prices, &StrategyConfig { cost_bps: 10.0 }).unwrap();
        assert!(costly.final_equity() < free.final_equity());
    }

    #[test]
    fn constant_equity_flags_all_ratio_degeneracies() {
        let ledger = ledger_from_equity(&[1.0, 1.0, 1.0, 1.0]);
        let m = trading_metrics(&ledger).unwrap();
        assert_eq!(m.arr, 0.0);
        assert_eq!(m.max_drawdown, 0.0);
        assert_eq!(m.sharpe, 0.0);
        assert!(m.degenerate.sharpe);
        assert!(m.degenerate.sortino);
        assert!(m.degenerate.calmar);
        assert!(m.degenerate.omega);
    }

    #[test]
    fn drawdown_of_spiky_path_is_minus_half() {
        let ledger = ledger_from_equity(&[1.0, 1.2, 0.6, 0.9]);
        let m = trading_metrics(&ledger).unwrap();
        assert_relative_eq!(m.max_drawdown, -0.5, max_relative = 1e-12);
    }

    #[test]
    fn all_positive_returns_degenerate_omega_and_sortino() {
        let ledger = ledger_from_equity(&[1.0, 1.01, 1.03, 1.04]);
        let m = trading_metrics(&ledger).unwrap();
        assert!(m.degenerate.omega);
        assert!(m.degenerate.sortino);
        assert!(!m.degenerate.sharpe);
        assert!(m.arr > 0.0);
        assert_eq!(m.max_drawdown, 0.0);
        assert!(m.degenerate.calmar);
    }

    #[test]
    fn too_short_ledger_is_an_error() {
        let ledger = ledger_from_equity(&[1.0]);
        assert!(trading_metrics(&ledger).is_err());
    }

    proptest! {
        /// Recomputing equity from stored returns recovers the curve.
        #[test]
        fn equity_and_returns_are_consistent(
            moves in proptest::collection::vec(-0.05f64..0.05, 1..40)
        ) {
            let mut equity = vec![1.0];
            for m in &moves {
                let last = *equity.last().unwrap();
                equity.push(last * (1.0 + m));
            }
            let ledger = ledger_from_equity(&equity);
            let mut rebuilt = ledger.entries[0].equity;
            for e in &ledger.entries[1..] {
                rebuilt *= 1.0 + e.daily_return;
                prop_assert!((rebuilt - e.equity).abs() <= 1e-12 * e.equity.abs());
            }
        }

        /// MDD is non-positive and zero exactly when the curve never falls.
        #[test]
        fn drawdown_sign_and_zero_condition(
            moves in proptest::collection::vec(-0.05f64..0.05, 2..40)
        ) {
            let mut equity = vec![1.0];
            for m in &moves {
                let last = *equity.last().unwrap();
                equity.push(last * (1.0 + m));
            }
            let ledger = ledger_from_equity(&equity);
            let m = trading_metrics(&ledger).unwrap();
            prop_assert!(m.max_drawdown <= 0.0);
            let non_decreasing = equity.windows(2).all(|w| w[1] >= w[0]);
            prop_assert_eq!(m.max_drawdown == 0.0, non_decreasing);
        }

        /// Scaling all prices leaves every metric unchanged.
        #[test]
        fn metrics_are_scale_invariant(factor in 0.1f64..100.0) {
            let closes = [100.0, 104.0, 99.0, 108.0, 95.0, 101.0];
            let scaled: Vec<f64> = closes.iter().map(|c| c * factor).collect();
            let ups = [true, false, true, false, true, false];
            let make = |cs: &[f64]| {
                let prices = vec![series("AAA", "2021-01-01", cs)];
                let signals: Vec<Signal> = ups
                    .iter()
                    .enumerate()
                    .map(|(i, &up)| Signal {
                        date: d("2021-01-01") + chrono::Days::new(i as u64),
                        symbol: "AAA".into(),
                        up,
                    })
                    .collect();
                trading_metrics(&run_strategy(&signals, &prices, &StrategyConfig::default()).unwrap()).unwrap()
            };
            let base = make(&closes);
            let scaled_m = make(&scaled);
            prop_assert!((base.arr - scaled_m.arr).abs() < 1e-9);
            prop_assert!((base.sharpe - scaled_m.sharpe).abs() < 1e-9);
            prop_assert!((base.max_drawdown - scaled_m.max_drawdown).abs() < 1e-12);
            prop_assert!((base.omega - scaled_m.omega).abs() < 1e-9);
        }

        /// Pointwise-greater daily returns never decrease the annualized
        /// return.
        #[test]
        fn arr_is_monotone_in_returns(
            moves in proptest::collection::vec(-0.05f64..0.05, 2..30),
            bumps in proptest::collection::vec(0.0f64..0.02, 2..30)
        ) {
            let n = moves.len().min(bumps.len());
            let build = |rs: &[f64]| {
                let mut equity = vec![1.0];
                for r in rs {
                    let last = *equity.last().unwrap();
                    equity.push(last * (1.0 + r));
                }
                trading_metrics(&ledger_from_equity(&equity)).unwrap().arr
            };
            let base: Vec<f64> = moves[..n].to_vec();
            let better: Vec<f64> = base.iter().zip(&bumps[..n]).map(|(m, b)| m + b).collect();
            prop_assert!(build(&better) >= build(&base) - 1e-12);
        }
    }
}
