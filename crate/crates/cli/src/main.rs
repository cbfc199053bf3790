use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use metastock::config::ExperimentConfig;
use metastock::evaluation::evaluate_backbone;
use metastock::experiment::{prepare_data, probe_difficulty, run_experiment};
use metastock::market_data::{
    load_csv_with_report, synthesize_from, write_csv, write_listing_sidecar,
};
use metastock::model::load_checkpoint;

#[derive(Parser)]
#[command(
    name = "metastock",
    about = "Difficulty-weighted meta-learning pipeline for stock movement prediction",
    version
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cap the worker thread pool (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the configured CSV data, printing an ingestion report.
    Ingest,
    /// Run the configured training method across all repeat seeds.
    Train,
    /// Evaluate a checkpoint on one split (val or test).
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Backtest a checkpoint's test-split predictions.
    Backtest {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare two checkpoints across difficulty terciles.
    Probe {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
    },
    /// Generate synthetic series and write them as CSV + listing sidecar.
    Synth {
        #[arg(long, default_value_t = 8)]
        n_series: usize,
        #[arg(long, default_value_t = 250)]
        n_days: usize,
        #[arg(long, default_value = "planted")]
        regime: String,
        #[arg(long, default_value = "2020-01-01")]
        start: String,
        #[arg(long, default_value = "SYN")]
        prefix: String,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .context("this command needs --config <path>")?;
    let mut cfg = ExperimentConfig::from_path(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.train.meta.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        metastock::par::configure_threads(cli.threads);
    }
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => {
            let cfg = load_config(&cli)?;
            let csv = match &cfg.data.csv {
                Some(csv) => csv,
                None => bail!("ingest needs a csv data source in the config"),
            };
            let schema = csv.columns.to_schema();
            for path in &csv.paths {
                let (series, report) = load_csv_with_report(path, &schema)?;
                println!(
                    "{}: {} series, {} rows read, {} dropped",
                    path.display(),
                    report.series_count,
                    report.rows_read,
                    report.rows_dropped
                );
                for skipped in &report.symbols_skipped {
                    println!("  warning: symbol {skipped} skipped (no usable rows)");
                }
                for s in &series {
                    println!(
                        "  {} listed {} with {} rows",
                        s.symbol,
                        s.listing_date,
                        s.rows.len()
                    );
                }
            }
            Ok(())
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let summary = run_experiment(&cfg)?;
            for outcome in &summary.per_seed {
                println!(
                    "seed {}: val acc {:.4} mcc {:.4} f1 {:.4} | test acc {:.4} mcc {:.4} f1 {:.4}",
                    outcome.seed,
                    outcome.val.acc,
                    outcome.val.mcc,
                    outcome.val.f1,
                    outcome.test.acc,
                    outcome.test.mcc,
                    outcome.test.f1
                );
            }
            let agg = &summary.aggregate;
            println!(
                "mean over {} seeds [{}]: val acc {:.4} mcc {:.4} f1 {:.4} | test acc {:.4} mcc {:.4} f1 {:.4}",
                agg.seeds.len(),
                agg.method,
                agg.mean_val.acc,
                agg.mean_val.mcc,
                agg.mean_val.f1,
                agg.mean_test.acc,
                agg.mean_test.mcc,
                agg.mean_test.f1
            );
            println!("artifacts in {}", summary.out_dir.display());
            Ok(())
        }
        Command::Evaluate { checkpoint, split } => {
            let cfg = load_config(&cli)?;
            let model = load_checkpoint(checkpoint)?;
            let data = prepare_data(&cfg, cfg.train.meta.seed)?;
            let samples = match split.as_str() {
                "val" => &data.subnew_val,
                "test" => &data.subnew_test,
                other => bail!("unknown split `{other}` (expected val or test)"),
            };
            let (metrics, cm) = evaluate_backbone(&model, samples)?;
            println!(
                "{split}: n {} acc {:.4} mcc {:.4} f1 {:.4}",
                samples.len(),
                metrics.acc,
                metrics.mcc,
                metrics.f1
            );
            println!(
                "confusion: tp {} fp {} tn {} fn {}",
                cm.true_pos, cm.false_pos, cm.true_neg, cm.false_neg
            );
            Ok(())
        }
        Command::Backtest { checkpoint } => {
            let cfg = load_config(&cli)?;
            let model = load_checkpoint(checkpoint)?;
            let data = prepare_data(&cfg, cfg.train.meta.seed)?;
            let metrics = metastock::experiment::backtest_checkpoint(&cfg, &model, &data)?;
            println!(
                "ARR {:.4}  SR {:.4}  MDD {:.4}  SoR {:.4}  CR {:.4}  OR {:.4}",
                metrics.arr,
                metrics.sharpe,
                metrics.max_drawdown,
                metrics.sortino,
                metrics.calmar,
                metrics.omega
            );
            if metrics.degenerate.any() {
                println!("degenerate: {:?}", metrics.degenerate);
            }
            Ok(())
        }
        Command::Probe { model_a, model_b } => {
            let cfg = load_config(&cli)?;
            let report = probe_difficulty(&cfg, model_a, model_b)?;
            println!(
                "{:<8} {:>8} {:>9} {:>9} {:>9} {:>10} {:>10} {:>10}",
                "group", "tasks", "ACC(a)", "ACC(b)", "dACC%", "dMCC%", "dF1%", "samples"
            );
            for g in &report.groups {
                let fmt = |v: Option<f64>| match v {
                    Some(x) => format!("{x:.2}"),
                    None => "n/a".to_string(),
                };
                println!(
                    "{:<8} {:>8} {:>9.4} {:>9.4} {:>9} {:>10} {:>10} {:>10}",
                    g.group,
                    g.n_tasks,
                    g.baseline.acc,
                    g.candidate.acc,
                    fmt(g.acc_gain_pct),
                    fmt(g.mcc_gain_pct),
                    fmt(g.f1_gain_pct),
                    g.n_samples
                );
            }
            Ok(())
        }
        Command::Synth {
            n_series,
            n_days,
            regime,
            start,
            prefix,
        } => {
            let out = cli
                .out
                .clone()
                .context("synth needs --out <dir> for the CSV files")?;
            std::fs::create_dir_all(&out)?;
            let regime = metastock::market_data::Regime::parse(regime)?;
            let start = start
                .parse()
                .map_err(|_| anyhow::anyhow!("unparsable start date `{start}`"))?;
            let seed = cli.seed.unwrap_or(7);
            let series = synthesize_from(*n_series, *n_days, regime, seed, start, prefix)?;
            let csv_path = out.join("series.csv");
            let sidecar_path = out.join("listing_dates.csv");
            write_csv(&csv_path, &series)?;
            write_listing_sidecar(&sidecar_path, &series)?;
            println!(
                "wrote {} series x {} days to {} (+ {})",
                n_series,
                n_days,
                csv_path.display(),
                sidecar_path.display()
            );
            Ok(())
        }
    }
}
