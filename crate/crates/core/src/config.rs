//! TOML experiment configuration: data source, splits, sampling, backbone
//! and training settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{CsvSchema, DateRange, Regime, SplitConfig};
use crate::meta_train::MetaConfig;
use crate::model::BackboneSpec;

fn default_window() -> usize {
    5
}

fn default_task_size() -> usize {
    24576
}

fn default_levels() -> usize {
    1
}

fn default_pos_threshold() -> f64 {
    0.55
}

fn default_neg_threshold() -> f64 {
    -0.5
}

fn default_repeats() -> usize {
    5
}

fn default_hidden() -> usize {
    16
}

fn default_filters() -> usize {
    8
}

fn default_backbone() -> String {
    "mlp".into()
}

fn default_method() -> String {
    "metastock".into()
}

fn default_cost_bps() -> f64 {
    0.0
}

/// Optional header-name overrides for the CSV reader.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CsvColumns {
    pub date: Option<String>,
    pub open: Option<String>,
    pub high: Option<String>,
    pub low: Option<String>,
    pub close: Option<String>,
    pub adj_close: Option<String>,
    pub volume: Option<String>,
    pub symbol: Option<String>,
}

impl CsvColumns {
    pub fn to_schema(&self) -> CsvSchema {
        let mut schema = CsvSchema::default();
        let assign = |slot: &mut String, value: &Option<String>| {
            if let Some(v) = value {
                *slot = v.clone();
            }
        };
        assign(&mut schema.date, &self.date);
        assign(&mut schema.open, &self.open);
        assign(&mut schema.high, &self.high);
        assign(&mut schema.low, &self.low);
        assign(&mut schema.close, &self.close);
        assign(&mut schema.adj_close, &self.adj_close);
        assign(&mut schema.volume, &self.volume);
        schema.symbol = self.symbol.clone();
        schema
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvDataConfig {
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub listing_sidecar: Option<PathBuf>,
    #[serde(default)]
    pub columns: CsvColumns,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticDataConfig {
    pub n_old_series: usize,
    pub n_subnew_series: usize,
    /// trend | meanrevert | planted
    pub regime: String,
}

impl SyntheticDataConfig {
    pub fn regime(&self) -> Result<Regime> {
        Regime::parse(&self.regime)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataConfig {
    /// "csv" or "synthetic".
    pub source: String,
    #[serde(default)]
    pub csv: Option<CsvDataConfig>,
    #[serde(default)]
    pub synthetic: Option<SyntheticDataConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSettings {
    pub old_start: String,
    pub old_end: String,
    pub train_start: String,
    pub train_end: String,
    pub val_start: String,
    pub val_end: String,
    pub test_start: String,
    pub test_end: String,
    #[serde(default = "default_pos_threshold")]
    pub pos_threshold: f64,
    #[serde(default = "default_neg_threshold")]
    pub neg_threshold: f64,
}

impl SplitSettings {
    pub fn to_split_config(&self) -> Result<SplitConfig> {
        let parse = |label: &str, s: &str| {
            s.parse()
                .map_err(|_| Error::Config(format!("unparsable {label} date `{s}`")))
        };
        let cfg = SplitConfig {
            old_range: DateRange::new(
                parse("old_start", &self.old_start)?,
                parse("old_end", &self.old_end)?,
            ),
            subnew_train: DateRange::new(
                parse("train_start", &self.train_start)?,
                parse("train_end", &self.train_end)?,
            ),
            subnew_val: DateRange::new(
                parse("val_start", &self.val_start)?,
                parse("val_end", &self.val_end)?,
            ),
            subnew_test: DateRange::new(
                parse("test_start", &self.test_start)?,
                parse("test_end", &self.test_end)?,
            ),
            pos_threshold: self.pos_threshold,
            neg_threshold: self.neg_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Hard caps applied to the sample pools after splitting (deterministic
/// truncation of the seeded shuffle order). Zero means no cap.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SampleCaps {
    #[serde(default)]
    pub old: usize,
    #[serde(default)]
    pub subnew_train: usize,
    #[serde(default)]
    pub subnew_val: usize,
    #[serde(default)]
    pub subnew_test: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Lookback window length (U).
    #[serde(default = "default_window")]
    pub window: usize,
    /// Samples per task (W).
    #[serde(default = "default_task_size")]
    pub task_size: usize,
    /// Decomposition levels for the difficulty score.
    #[serde(default = "default_levels")]
    pub wavelet_levels: usize,
    #[serde(default)]
    pub caps: SampleCaps,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            task_size: default_task_size(),
            wavelet_levels: default_levels(),
            caps: SampleCaps::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// "mlp" or "rescnn1d".
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: default_backbone(),
            hidden: default_hidden(),
            filters: default_filters(),
        }
    }
}

impl ModelConfig {
    pub fn to_spec(&self, window: usize, feature_dim: usize) -> Result<BackboneSpec> {
        match self.backbone.as_str() {
            "mlp" => Ok(BackboneSpec::mlp(window, feature_dim, self.hidden)),
            "rescnn1d" => Ok(BackboneSpec::rescnn(window, feature_dim, self.filters)),
            other => Err(Error::Config(format!(
                "unknown backbone `{other}` (expected mlp or rescnn1d)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSettings {
    /// metastock | reptile | transfer | scratch
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(flatten)]
    pub meta: MetaConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            method: default_method(),
            repeats: default_repeats(),
            meta: MetaConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Metastock,
    Reptile,
    Transfer,
    Scratch,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "metastock" => Ok(Self::Metastock),
            "reptile" => Ok(Self::Reptile),
            "transfer" => Ok(Self::Transfer),
            "scratch" => Ok(Self::Scratch),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected metastock, reptile, transfer or scratch)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Metastock => "metastock",
            Self::Reptile => "reptile",
            Self::Transfer => "transfer",
            Self::Scratch => "scratch",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BacktestConfig {
    #[serde(default = "default_cost_bps")]
    pub cost_bps: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            cost_bps: default_cost_bps(),
        }
    }
}

/// Everything one experiment run needs; the TOML snapshot of this struct
/// fully describes the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitSettings,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub backtest: BacktestConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("toml parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("toml write: {e}")))
    }

    pub fn method(&self) -> Result<Method> {
        Method::parse(&self.train.method)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.source.as_str() {
            "csv" => {
                let csv = self.data.csv.as_ref().ok_or_else(|| {
                    Error::Config("source = \"csv\" needs a [data.csv] table".into())
                })?;
                if csv.paths.is_empty() {
                    return Err(Error::Config("data.csv.paths is empty".into()));
                }
                for path in &csv.paths {
                    if !path.exists() {
                        return Err(Error::Config(format!(
                            "csv path does not exist: {}",
                            path.display()
                        )));
                    }
                }
                if let Some(sidecar) = &csv.listing_sidecar {
                    if !sidecar.exists() {
                        return Err(Error::Config(format!(
                            "listing sidecar does not exist: {}",
                            sidecar.display()
                        )));
                    }
                }
            }
            "synthetic" => {
                let synth = self.data.synthetic.as_ref().ok_or_else(|| {
                    Error::Config("source = \"synthetic\" needs a [data.synthetic] table".into())
                })?;
                if synth.n_old_series == 0 || synth.n_subnew_series == 0 {
                    return Err(Error::Config(
                        "synthetic data needs at least one old and one sub-new series".into(),
                    ));
                }
                synth.regime()?;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown data source `{other}` (expected csv or synthetic)"
                )));
            }
        }
        self.split.to_split_config()?;
        if self.sampling.window < 2 {
            return Err(Error::Config("sampling.window must be at least 2".into()));
        }
        if self.sampling.task_size == 0 {
            return Err(Error::Config("sampling.task_size must be positive".into()));
        }
        if self.sampling.wavelet_levels == 0 {
            return Err(Error::Config(
                "sampling.wavelet_levels must be at least 1".into(),
            ));
        }
        self.model.to_spec(self.sampling.window, 2)?;
        Method::parse(&self.train.method)?;
        if self.train.repeats == 0 {
            return Err(Error::Config("train.repeats must be at least 1".into()));
        }
        self.train.meta.validate()?;
        if self.backtest.cost_bps < 0.0 {
            return Err(Error::Config(
                "backtest.cost_bps must not be negative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMOKE_TOML: &str = r#"
        [data]
        source = "synthetic"

        [data.synthetic]
        n_old_series = 4
        n_subnew_series = 2
        regime = "planted"

        [split]
        old_start = "2020-01-01"
        old_end = "2020-06-30"
        train_start = "2020-07-06"
        train_end = "2020-08-31"
        val_start = "2020-09-01"
        val_end = "2020-09-30"
        test_start = "2020-10-01"
        test_end = "2020-11-30"
        pos_threshold = 0.55
        neg_threshold = -0.5

        [sampling]
        window = 5
        task_size = 40

        [model]
        backbone = "mlp"
        hidden = 8

        [train]
        method = "metastock"
        repeats = 2
        epochs = 3
        inner_steps = 2
        meta_batch = 2
        inner_batch = 32
        adapt_steps = 10
        seed = 11

        [output]
        dir = "runs/smoke"
    "#;

    #[test]
    fn smoke_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(SMOKE_TOML).unwrap();
        assert_eq!(cfg.method().unwrap(), Method::Metastock);
        assert_eq!(cfg.train.meta.epochs, 3);
        assert_eq!(cfg.sampling.window, 5);
        assert_eq!(cfg.train.repeats, 2);
    }

    #[test]
    fn defaults_keep_reference_hyperparameters() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            [data]
            source = "synthetic"
            [data.synthetic]
            n_old_series = 1
            n_subnew_series = 1
            regime = "trend"
            [split]
            old_start = "2020-01-01"
            old_end = "2020-06-30"
            train_start = "2020-07-06"
            train_end = "2020-08-31"
            val_start = "2020-09-01"
            val_end = "2020-09-30"
            test_start = "2020-10-01"
            test_end = "2020-11-30"
            [output]
            dir = "runs/x"
        "#,
        )
        .unwrap();
        assert_eq!(cfg.sampling.window, 5);
        assert_eq!(cfg.sampling.task_size, 24576);
        assert_eq!(cfg.train.meta.inner_steps, 6);
        assert_eq!(cfg.train.meta.meta_batch, 6);
        assert_eq!(cfg.train.meta.inner_batch, 4096);
        assert_eq!(cfg.train.meta.epochs, 50);
        assert_eq!(cfg.train.meta.weight_decay, 1e-5);
        assert_eq!(cfg.split.pos_threshold, 0.55);
        assert_eq!(cfg.split.neg_threshold, -0.5);
        assert_eq!(cfg.train.repeats, 5);
        // Task size factors as meta_batch * inner_batch.
        assert_eq!(
            cfg.sampling.task_size,
            cfg.train.meta.meta_batch * cfg.train.meta.inner_batch
        );
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(SMOKE_TOML).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let again = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(again.train.meta.seed, cfg.train.meta.seed);
        assert_eq!(again.split.test_end, cfg.split.test_end);
    }

    #[test]
    fn csv_column_overrides_reach_the_schema() {
        let columns: CsvColumns = toml::from_str(
            r#"
            date = "Date"
            adj_close = "Adj Close"
            symbol = "Ticker"
        "#,
        )
        .unwrap();
        let schema = columns.to_schema();
        assert_eq!(schema.date, "Date");
        assert_eq!(schema.adj_close, "Adj Close");
        assert_eq!(schema.open, "open");
        assert_eq!(schema.symbol.as_deref(), Some("Ticker"));
    }

    #[test]
    fn bad_method_is_rejected() {
        let text = SMOKE_TOML.replace("metastock", "mystery");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn overlapping_ranges_are_rejected() {
        let text = SMOKE_TOML.replace("2020-07-06", "2020-06-15");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
