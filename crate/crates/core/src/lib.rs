//! Difficulty-weighted meta-learning for data-scarce stock movement
//! prediction.
//!
//! The pipeline ingests (or synthesizes) OHLCV series, turns them into
//! labeled sliding-window samples, scores each sample's volatility with a
//! Haar filter bank, bags samples into fixed-size tasks whose difficulty
//! drives softmax gradient weights, meta-trains a small classifier across
//! the data-rich "old" population, and adapts the resulting initialization
//! to the data-scarce "sub-new" population. Evaluation covers ACC/MCC/F1,
//! a Wilcoxon signed-rank test, difficulty-tercile probing and a long-only
//! trading backtest with six risk/return metrics.
//!
//! Data-parallel stages (per-series sample generation, per-sample
//! difficulty scoring, per-task inner loops, batch inference) run on rayon
//! when the default `parallel` feature is enabled and fall back to
//! sequential loops without it; both paths produce bit-identical results.

pub mod backtest;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod market_data;
pub mod meta_train;
pub mod model;
pub mod par;
pub mod tasking;
pub mod wavelet;

pub use error::{Error, Result};
