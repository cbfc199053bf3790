//! End-to-end experiment orchestration: data preparation, training per
//! seed, evaluation, backtest and artifact output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Days;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backtest::{
    run_strategy, trading_metrics, Signal, StrategyConfig, TradeLedger, TradingMetrics,
};
use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_backbone, tercile_report, ClassificationMetrics, TercileReport};
use crate::market_data::{
    apply_listing_dates, load_csv_with_report, load_listing_dates, split_population,
    synthesize_from, Sample, SplitConfig, StockSeries, FEATURE_DIM,
};
use crate::meta_train::{
    train_baseline, train_metastock, BaselineKind, CountedPool, MetaConfig, RunRecord, TrainData,
};
use crate::model::{load_checkpoint, save_checkpoint, Backbone};
use crate::tasking::{build_tasks, compute_weights, tercile_partition, write_task_manifest, Task};
use crate::wavelet::attach_difficulties;

/// Seed salts so the model initialization, pool capping and task shuffles
/// draw from unrelated streams.
const MODEL_SEED_SALT: u64 = 0x5EED_0001;
const CAP_SEED_SALT: u64 = 0x5EED_0002;
const SUBNEW_TASK_SEED_SALT: u64 = 0x5EED_0003;

/// Ready-to-train pools and tasks for one seed.
pub struct PreparedData {
    pub series: Vec<StockSeries>,
    pub split_config: SplitConfig,
    pub old_tasks: Vec<Task>,
    pub old_pool: CountedPool,
    pub subnew_train_tasks: Vec<Task>,
    pub subnew_val: Vec<Sample>,
    pub subnew_test: Vec<Sample>,
}

fn cap_pool(pool: &mut Vec<Sample>, cap: usize, seed: u64) {
    if cap > 0 && pool.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.shuffle(&mut rng);
        pool.truncate(cap);
    }
}

fn load_series(cfg: &ExperimentConfig, split: &SplitConfig, seed: u64) -> Result<Vec<StockSeries>> {
    match cfg.data.source.as_str() {
        "csv" => {
            let csv_cfg = cfg
                .data
                .csv
                .as_ref()
                .ok_or_else(|| Error::Config("missing [data.csv]".into()))?;
            let schema = csv_cfg.columns.to_schema();
            let mut series = Vec::new();
            for path in &csv_cfg.paths {
                let (mut loaded, _) = load_csv_with_report(path, &schema)?;
                series.append(&mut loaded);
            }
            if let Some(sidecar) = &csv_cfg.listing_sidecar {
                let dates = load_listing_dates(sidecar)?;
                apply_listing_dates(&mut series, &dates);
            }
            series.sort_by(|a, b| a.symbol.cmp(&b.symbol));
            Ok(series)
        }
        "synthetic" => {
            let synth = cfg
                .data
                .synthetic
                .as_ref()
                .ok_or_else(|| Error::Config("missing [data.synthetic]".into()))?;
            let regime = synth.regime()?;
            let subnew_window = split.subnew_window();
            let mut series = synthesize_from(
                synth.n_old_series,
                split.old_range.n_days() as usize,
                regime,
                seed,
                split.old_range.start,
                "OLD",
            )?;
            series.extend(synthesize_from(
                synth.n_subnew_series,
                subnew_window.n_days() as usize,
                regime,
                seed.wrapping_add(0x00FF_00FF),
                subnew_window.start,
                "NEW",
            )?);
            Ok(series)
        }
        other => Err(Error::Config(format!("unknown data source `{other}`"))),
    }
}

/// Build the per-seed pools: series, per-sample difficulties, capped pools
/// and tasks. Task weights are left at 1 here; the adaptive method computes
/// them at training time.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let split_config = cfg.split.to_split_config()?;
    let series = load_series(cfg, &split_config, seed)?;
    let mut splits = split_population(&series, &split_config, cfg.sampling.window)?;

    let levels = cfg.sampling.wavelet_levels;
    attach_difficulties(&mut splits.old, levels);
    attach_difficulties(&mut splits.subnew_train, levels);
    attach_difficulties(&mut splits.subnew_val, levels);
    attach_difficulties(&mut splits.subnew_test, levels);

    let caps = cfg.sampling.caps;
    cap_pool(&mut splits.old, caps.old, seed ^ CAP_SEED_SALT);
    cap_pool(
        &mut splits.subnew_train,
        caps.subnew_train,
        seed ^ CAP_SEED_SALT ^ 1,
    );
    cap_pool(
        &mut splits.subnew_val,
        caps.subnew_val,
        seed ^ CAP_SEED_SALT ^ 2,
    );
    cap_pool(
        &mut splits.subnew_test,
        caps.subnew_test,
        seed ^ CAP_SEED_SALT ^ 3,
    );

    let old_pool = CountedPool::new(splits.old.clone());
    let old_tasks = build_tasks(splits.old, cfg.sampling.task_size, seed)?;
    let subnew_train_tasks = build_tasks(
        splits.subnew_train,
        cfg.sampling.task_size,
        seed ^ SUBNEW_TASK_SEED_SALT,
    )?;

    Ok(PreparedData {
        series,
        split_config,
        old_tasks,
        old_pool,
        subnew_train_tasks,
        subnew_val: splits.subnew_val,
        subnew_test: splits.subnew_test,
    })
}

/// One line of the metric report.
#[derive(Clone, Debug, Serialize)]
pub struct MetricRecord {
    pub split: String,
    pub model: String,
    pub seed: u64,
    pub acc: f64,
    pub mcc: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub method: String,
    pub val: ClassificationMetrics,
    pub test: ClassificationMetrics,
    pub n_val: usize,
    pub n_test: usize,
    pub trading: TradingMetrics,
    #[serde(skip)]
    pub record: RunRecord,
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregateReport {
    pub method: String,
    pub seeds: Vec<u64>,
    pub mean_val: ClassificationMetrics,
    pub mean_test: ClassificationMetrics,
    pub mean_trading: TradingMetricsSummary,
}

/// Trading metric means; degenerate flags are aggregated as counts.
#[derive(Clone, Debug, Serialize)]
pub struct TradingMetricsSummary {
    pub arr: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub sortino: f64,
    pub calmar: f64,
    pub omega: f64,
    pub degenerate_runs: usize,
}

pub struct ExperimentSummary {
    pub per_seed: Vec<SeedOutcome>,
    pub aggregate: AggregateReport,
    pub out_dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json write: {e}")))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for item in items {
        let line =
            serde_json::to_string(item).map_err(|e| Error::Config(format!("json write: {e}")))?;
        writeln!(file, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

/// Predictions on the test pool as dated per-symbol signals.
fn test_signals(model: &Backbone, test: &[Sample]) -> Result<Vec<Signal>> {
    let predictions = model.predict(test)?;
    Ok(test
        .iter()
        .zip(predictions)
        .map(|(sample, up)| Signal {
            date: sample.anchor_date,
            symbol: sample.symbol.clone(),
            up: up == 1,
        })
        .collect())
}

/// Price series clipped to the test range plus a few days so the final
/// signal's next-day move is realized.
fn backtest_prices(series: &[StockSeries], split: &SplitConfig) -> Vec<StockSeries> {
    let start = split.subnew_test.start;
    let end = split.subnew_test.end + Days::new(3);
    series
        .iter()
        .filter_map(|s| {
            let rows: Vec<_> = s
                .rows
                .iter()
                .filter(|r| r.date >= start && r.date <= end)
                .cloned()
                .collect();
            if rows.is_empty() {
                None
            } else {
                StockSeries::new(s.symbol.clone(), s.listing_date, rows).ok()
            }
        })
        .collect()
}

/// Run the configured method once. Artifacts land in `seed_dir` when given.
pub fn run_single(
    cfg: &ExperimentConfig,
    seed: u64,
    seed_dir: Option<&Path>,
) -> Result<SeedOutcome> {
    let method = cfg.method()?;
    let mut data = prepare_data(cfg, seed)?;
    let spec = cfg.model.to_spec(cfg.sampling.window, FEATURE_DIM)?;
    let init = Backbone::init(spec, seed ^ MODEL_SEED_SALT);

    let mut meta: MetaConfig = cfg.train.meta.clone();
    meta.seed = seed;
    meta.adaptive = method == Method::Metastock;

    let output = match method {
        Method::Metastock => {
            compute_weights(&mut data.old_tasks)?;
            train_metastock(
                &init,
                &data.old_tasks,
                &data.subnew_train_tasks,
                &data.subnew_val,
                &meta,
            )?
        }
        Method::Reptile => train_baseline(
            BaselineKind::Reptile,
            &init,
            &TrainData {
                old_tasks: Some(&data.old_tasks),
                old_pool: Some(&data.old_pool),
                subnew_train_tasks: &data.subnew_train_tasks,
                subnew_val: &data.subnew_val,
            },
            &meta,
        )?,
        Method::Transfer => train_baseline(
            BaselineKind::Transfer,
            &init,
            &TrainData {
                old_tasks: Some(&data.old_tasks),
                old_pool: Some(&data.old_pool),
                subnew_train_tasks: &data.subnew_train_tasks,
                subnew_val: &data.subnew_val,
            },
            &meta,
        )?,
        Method::Scratch => train_baseline(
            BaselineKind::Scratch,
            &init,
            &TrainData {
                old_tasks: None,
                old_pool: None,
                subnew_train_tasks: &data.subnew_train_tasks,
                subnew_val: &data.subnew_val,
            },
            &meta,
        )?,
    };

    let (val_metrics, _) = evaluate_backbone(&output.model, &data.subnew_val)?;
    let (test_metrics, _) = evaluate_backbone(&output.model, &data.subnew_test)?;

    let signals = test_signals(&output.model, &data.subnew_test)?;
    let prices = backtest_prices(&data.series, &data.split_config);
    let ledger = run_strategy(
        &signals,
        &prices,
        &StrategyConfig {
            cost_bps: cfg.backtest.cost_bps,
        },
    )?;
    let trading = trading_metrics(&ledger)?;

    let outcome = SeedOutcome {
        seed,
        method: method.name().to_string(),
        val: val_metrics,
        test: test_metrics,
        n_val: data.subnew_val.len(),
        n_test: data.subnew_test.len(),
        trading,
        record: output.record,
    };

    if let Some(dir) = seed_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_seed_artifacts(dir, cfg, &outcome, &output.model, &data, &ledger)?;
    }
    Ok(outcome)
}

fn write_seed_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &SeedOutcome,
    model: &Backbone,
    data: &PreparedData,
    ledger: &TradeLedger,
) -> Result<()> {
    save_checkpoint(dir.join("checkpoint.bin"), model)?;

    let manifest_path = dir.join("tasks.jsonl");
    let file = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    write_task_manifest(file, &data.old_tasks)?;

    write_jsonl(&dir.join("epochs.jsonl"), &outcome.record.epochs)?;

    let metrics = [
        MetricRecord {
            split: "val".into(),
            model: outcome.method.clone(),
            seed: outcome.seed,
            acc: outcome.val.acc,
            mcc: outcome.val.mcc,
            f1: outcome.val.f1,
            n: outcome.n_val,
        },
        MetricRecord {
            split: "test".into(),
            model: outcome.method.clone(),
            seed: outcome.seed,
            acc: outcome.test.acc,
            mcc: outcome.test.mcc,
            f1: outcome.test.f1,
            n: outcome.n_test,
        },
    ];
    write_jsonl(&dir.join("metrics.jsonl"), &metrics)?;
    write_jsonl(&dir.join("ledger.jsonl"), &ledger.entries)?;
    write_json(&dir.join("trading.json"), &outcome.trading)?;
    // Wall-clock time lives apart from the deterministic reports.
    write_json(
        &dir.join("timing.json"),
        &serde_json::json!({
            "wall_secs": outcome.record.wall_secs,
            "best_epoch": outcome.record.best_epoch,
        }),
    )?;
    let _ = cfg;
    Ok(())
}

fn mean_metrics(items: &[ClassificationMetrics]) -> ClassificationMetrics {
    let n = items.len().max(1) as f64;
    ClassificationMetrics {
        acc: items.iter().map(|m| m.acc).sum::<f64>() / n,
        mcc: items.iter().map(|m| m.mcc).sum::<f64>() / n,
        f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

fn mean_trading(items: &[TradingMetrics]) -> TradingMetricsSummary {
    let n = items.len().max(1) as f64;
    TradingMetricsSummary {
        arr: items.iter().map(|m| m.arr).sum::<f64>() / n,
        sharpe: items.iter().map(|m| m.sharpe).sum::<f64>() / n,
        max_drawdown: items.iter().map(|m| m.max_drawdown).sum::<f64>() / n,
        sortino: items.iter().map(|m| m.sortino).sum::<f64>() / n,
        calmar: items.iter().map(|m| m.calmar).sum::<f64>() / n,
        omega: items.iter().map(|m| m.omega).sum::<f64>() / n,
        degenerate_runs: items.iter().filter(|m| m.degenerate.any()).count(),
    }
}

/// Run the full pipeline once per seed (base seed, base+1, ...), write
/// per-seed artifacts plus a mean-aggregated report, and return the
/// summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out_dir = cfg.output.dir.clone();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml_string()?)
        .map_err(io_err(&out_dir.join("config.toml")))?;

    let base = cfg.train.meta.seed;
    let mut per_seed = Vec::with_capacity(cfg.train.repeats);
    for i in 0..cfg.train.repeats {
        let seed = base + i as u64;
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        per_seed.push(run_single(cfg, seed, Some(&seed_dir))?);
    }

    let aggregate = AggregateReport {
        method: cfg.train.method.clone(),
        seeds: per_seed.iter().map(|o| o.seed).collect(),
        mean_val: mean_metrics(&per_seed.iter().map(|o| o.val).collect::<Vec<_>>()),
        mean_test: mean_metrics(&per_seed.iter().map(|o| o.test).collect::<Vec<_>>()),
        mean_trading: mean_trading(&per_seed.iter().map(|o| o.trading).collect::<Vec<_>>()),
    };
    write_json(&out_dir.join("aggregate.json"), &aggregate)?;
    write_jsonl(&out_dir.join("per_seed.jsonl"), &per_seed)?;

    Ok(ExperimentSummary {
        per_seed,
        aggregate,
        out_dir,
    })
}

/// Backtest a trained model's test-split predictions, writing the ledger
/// and metric summary into the output directory.
pub fn backtest_checkpoint(
    cfg: &ExperimentConfig,
    model: &Backbone,
    data: &PreparedData,
) -> Result<TradingMetrics> {
    let signals = test_signals(model, &data.subnew_test)?;
    let prices = backtest_prices(&data.series, &data.split_config);
    let ledger = run_strategy(
        &signals,
        &prices,
        &StrategyConfig {
            cost_bps: cfg.backtest.cost_bps,
        },
    )?;
    let metrics = trading_metrics(&ledger)?;
    let out_dir = &cfg.output.dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_jsonl(&out_dir.join("ledger.jsonl"), &ledger.entries)?;
    write_json(&out_dir.join("trading.json"), &metrics)?;
    Ok(metrics)
}

/// Difficulty-tercile probe: partition the sub-new test pool into tasks,
/// split them into difficulty terciles and report the per-group metrics of
/// two checkpointed models plus the candidate's relative gains.
pub fn probe_difficulty(
    cfg: &ExperimentConfig,
    baseline_ckpt: &Path,
    candidate_ckpt: &Path,
) -> Result<TercileReport> {
    let baseline = load_checkpoint(baseline_ckpt)?;
    let candidate = load_checkpoint(candidate_ckpt)?;
    let data = prepare_data(cfg, cfg.train.meta.seed)?;
    let test_tasks = build_tasks(
        data.subnew_test.clone(),
        cfg.sampling.task_size,
        cfg.train.meta.seed,
    )?;
    let partition = tercile_partition(&test_tasks)?;
    let report = tercile_report(&baseline, &candidate, &test_tasks, &partition)?;
    let out_dir = &cfg.output.dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_json(&out_dir.join("probe_report.json"), &report)?;
    Ok(report)
}
