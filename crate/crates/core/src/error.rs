use chrono::NaiveDate;
use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("duplicate date {date} for symbol {symbol}")]
    DuplicateDate { symbol: String, date: NaiveDate },

    #[error("invalid series {symbol}: {message}")]
    InvalidSeries { symbol: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid split config: {0}")]
    InvalidSplit(String),

    #[error("empty {population} population: widen the configured date ranges so both old and sub-new series exist")]
    EmptyPopulation { population: String },

    #[error("signal too short: need at least 2 points, got {len}")]
    SignalTooShort { len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(
        "sample pool of {pool} is smaller than task size {task_size}: use a smaller task size"
    )]
    PoolTooSmall { pool: usize, task_size: usize },

    #[error("non-finite difficulty on task {task_id}")]
    NonFiniteDifficulty { task_id: usize },

    #[error("tercile partition needs at least 3 tasks, got {n}")]
    TooFewTasks { n: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite loss: {context}")]
    NonFiniteLoss { context: String },

    #[error("too few non-zero pairs for the signed-rank test: need at least 6, got {n}")]
    TooFewPairs { n: usize },

    #[error("empty task group `{group}`")]
    EmptyGroup { group: String },

    #[error("missing close price for {symbol} on {date}")]
    MissingPrice { symbol: String, date: NaiveDate },

    #[error("ledger needs at least 2 dates, got {n}")]
    LedgerTooShort { n: usize },

    #[error("missing data split `{split}` for this training method")]
    MissingSplit { split: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
