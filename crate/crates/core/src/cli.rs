//! Command-line interface: `ingest`, `train`, `eval`, `predict`, `gradcheck`.
//!
//! Precedence for settings is defaults < config file < command-line flags.
//! All randomness flows from the single `seed` key. Exit codes: 0 success,
//! 1 data/numeric error, 2 usage error.

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{RunConfig, CONFIG_ENV_VAR};
use crate::data::{
    aggregate, apply_normalization, build_windows, normalize, parse_raw_file,
    read_dataset_manifest, read_series_csv, split, write_dataset_manifest, write_gap_report,
    write_series_csv, Split, VolumeSeries, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::gradcheck::{
    dense_check_system, gradient_check, lstm_check_system, rnn_check_system, GradCheckReport,
};
use crate::nn::{roll_forward, Activation, ModelKind};
use crate::train::{evaluate, fit, history_to_csv, MetricsReport, Space};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "trafficast",
    version,
    about = "Traffic-volume forecasting with a from-scratch stacked LSTM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a raw traffic-count CSV and aggregate it into 15-minute bins
    Ingest(IngestArgs),
    /// Train a model on a processed series and save the best checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split; optionally compare two checkpoints
    Eval(EvalArgs),
    /// Predict the next bins from the tail of a processed series
    Predict(PredictArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines (TRAFFICAST_CONFIG is the fallback)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var(CONFIG_ENV_VAR).ok().map(PathBuf::from));
        if let Some(p) = path {
            cfg.apply_file(&p)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.apply_text(&format!("{k} = {v}"))?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw CSV export with header intersection_id,timestamp,direction,vehicle_class,volume
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for series.csv, gaps.csv, and manifest.txt
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Select one intersection from a mixed export
    #[arg(long)]
    pub intersection: Option<String>,
    /// Time bin length in minutes
    #[arg(long)]
    pub bin_minutes: Option<i64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Processed series CSV (from `ingest`)
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Output directory for checkpoint.tfck, history.csv, dataset_manifest.txt
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model variant
    #[arg(long, value_parser = ["lstm", "baseline"])]
    pub model: Option<String>,
    /// RNG seed; the single source of randomness
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip_threshold: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    pub optimizer: Option<String>,
    /// Comma-separated hidden layer sizes, e.g. 32,16
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Processed series CSV the checkpoint was trained on
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Second checkpoint for a side-by-side comparison table
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Dataset manifest to cross-check splits and normalization
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "validation", "val", "test"])]
    pub split: String,
    #[arg(long, default_value = "normalized", value_parser = ["normalized", "original"])]
    pub space: String,
    /// Output directory for metrics.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Processed series CSV whose tail seeds the prediction
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Number of bins to predict; above 1 feeds predictions back as inputs
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    /// Optional CSV output path for the predictions
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Maximum allowed relative error
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Central-difference step
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_FD_STEP)]
    pub step: f64,
    /// Layer family to check
    #[arg(long, default_value = "all", value_parser = ["all", "dense", "rnn", "lstm"])]
    pub layer: String,
    /// Hidden activation for the dense family
    #[arg(long, default_value = "relu", value_parser = ["relu", "linear"])]
    pub activation: String,
    /// Number of seeded instances per family
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(i) = args.intersection {
        cfg.intersection = Some(i);
    }
    if let Some(b) = args.bin_minutes {
        cfg.bin_minutes = b;
    }
    let records = parse_raw_file(&args.input, &cfg.columns)?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "{} contains a header but no data rows",
            args.input.display()
        )));
    }
    let (series, gaps) = aggregate(&records, cfg.bin_minutes, cfg.intersection.as_deref())?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    write_series_csv(&series, &cfg.out_dir.join("series.csv"))?;
    write_gap_report(&gaps, &cfg.out_dir.join("gaps.csv"))?;
    let mut manifest = String::new();
    writeln!(manifest, "intersection_id = {}", series.intersection_id).unwrap();
    writeln!(manifest, "bin_minutes = {}", series.bin_minutes).unwrap();
    writeln!(manifest, "bins = {}", series.len()).unwrap();
    writeln!(manifest, "gaps = {}", gaps.missing_bins.len()).unwrap();
    writeln!(
        manifest,
        "start = {}",
        series.start.format(crate::data::TIMESTAMP_FORMAT)
    )
    .unwrap();
    std::fs::write(cfg.out_dir.join("manifest.txt"), manifest)?;

    println!(
        "ingested {} records from {} into {} bins ({} gap bins zero-filled)",
        records.len(),
        args.input.display(),
        series.len(),
        gaps.missing_bins.len()
    );
    Ok(())
}

fn load_series(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<VolumeSeries> {
    let path = flag
        .clone()
        .or_else(|| cfg.series.clone())
        .ok_or_else(|| Error::Usage("no series file given (use --series or the config key)".into()))?;
    read_series_csv(&path)
}

fn build_dataset(cfg: &RunConfig, series: &VolumeSeries) -> Result<WindowedDataset> {
    let mut ds = build_windows(series, cfg.train.window_len)?;
    split(&mut ds, cfg.train_frac, cfg.val_frac, cfg.test_frac)?;
    Ok(ds)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(p) = &args.series {
        cfg.series = Some(p.clone());
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(m) = &args.model {
        cfg.train.model = ModelKind::parse(m)?;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.dropout {
        cfg.train.dropout_p = v;
    }
    if let Some(v) = args.clip_threshold {
        cfg.train.clip_threshold = v;
    }
    if let Some(v) = args.patience {
        cfg.train.patience = v;
    }
    if let Some(o) = &args.optimizer {
        cfg.train.optimizer = crate::optim::OptimizerKind::parse(o)?;
    }
    if let Some(h) = &args.hidden {
        cfg.apply_text(&format!("hidden = {h}"))?;
    }
    if let Some(v) = args.window_len {
        cfg.train.window_len = v;
    }
    cfg.validate()?;

    let series = load_series(&cfg, &args.series)?;
    let mut ds = build_dataset(&cfg, &series)?;
    normalize(&mut ds, cfg.norm_scheme, cfg.norm_scope)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = cfg.train.build_model(&mut rng)?;
    let (best, history) = fit(&mut model, &ds, &cfg.train, &mut rng)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    save_checkpoint(&best, &cfg.out_dir.join("checkpoint.tfck"))?;
    std::fs::write(cfg.out_dir.join("history.csv"), history_to_csv(&history))?;
    write_dataset_manifest(&ds, &cfg.out_dir.join("dataset_manifest.txt"))?;

    let mut best_model = best.build_model()?;
    let metrics = evaluate(&mut best_model, &ds, Split::Validation, Space::Normalized)?;
    println!(
        "trained {} for {} epochs (best epoch {}, best val loss {:.6})",
        cfg.train.model.as_str(),
        history.len(),
        best.epoch,
        best.best_val_loss
    );
    print!(
        "{}",
        metrics_table(&[(cfg.train.model.as_str().to_string(), metrics)], "validation")
    );
    Ok(())
}

fn metrics_table(columns: &[(String, MetricsReport)], split: &str) -> String {
    let mut out = String::new();
    write!(out, "{:<8}", format!("[{split}]")).unwrap();
    for (name, _) in columns {
        write!(out, " {name:>12}").unwrap();
    }
    out.push('\n');
    for (label, pick) in [
        ("MAE", 0usize),
        ("MSE", 1),
        ("RMSE", 2),
    ] {
        write!(out, "{label:<8}").unwrap();
        for (_, m) in columns {
            let v = match pick {
                0 => m.mae,
                1 => m.mse,
                _ => m.rmse,
            };
            write!(out, " {v:>12.6}").unwrap();
        }
        out.push('\n');
    }
    write!(out, "{:<8}", "n").unwrap();
    for (_, m) in columns {
        write!(out, " {:>12}", m.n).unwrap();
    }
    out.push('\n');
    out
}

fn metrics_csv(columns: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("metric");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (label, pick) in [("mae", 0usize), ("mse", 1), ("rmse", 2)] {
        out.push_str(label);
        for (_, m) in columns {
            let v = match pick {
                0 => m.mae,
                1 => m.mse,
                _ => m.rmse,
            };
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out.push_str("n");
    for (_, m) in columns {
        out.push_str(&format!(",{}", m.n));
    }
    out.push('\n');
    out
}

/// Rebuilds the windowed dataset exactly as the checkpoint expects it and
/// applies the checkpoint's stored normalization (never refits).
fn dataset_for_checkpoint(
    cfg: &RunConfig,
    series: &VolumeSeries,
    ckpt: &Checkpoint,
    manifest: &Option<PathBuf>,
) -> Result<WindowedDataset> {
    let mut ds = build_windows(series, ckpt.config.window_len)?;
    match manifest {
        Some(path) => {
            let (window_len, idx, stats, samples) = read_dataset_manifest(path)?;
            if window_len != ckpt.config.window_len {
                return Err(Error::Data(format!(
                    "manifest window_len {window_len} does not match checkpoint {}",
                    ckpt.config.window_len
                )));
            }
            if stats.scheme != ckpt.norm.scheme
                || (stats.center - ckpt.norm.center).abs() > 1e-9
                || (stats.scale - ckpt.norm.scale).abs() > 1e-9
            {
                return Err(Error::Data(
                    "dataset manifest normalization does not match checkpoint".into(),
                ));
            }
            if samples != ds.len() {
                return Err(Error::Data(format!(
                    "manifest covers {samples} samples but the series yields {}",
                    ds.len()
                )));
            }
            ds.split = Some(idx);
        }
        None => {
            split(&mut ds, cfg.train_frac, cfg.val_frac, cfg.test_frac)?;
        }
    }
    apply_normalization(&mut ds, &ckpt.norm);
    Ok(ds)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let split_sel = Split::parse(&args.split)?;
    let space = Space::parse(&args.space)?;

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let series = load_series(&cfg, &args.series)?;
    let ds = dataset_for_checkpoint(&cfg, &series, &ckpt, &args.manifest)?;
    let mut model = ckpt.build_model()?;
    let metrics = evaluate(&mut model, &ds, split_sel, space)?;
    let mut columns = vec![(ckpt.config.model.as_str().to_string(), metrics)];

    if let Some(other_path) = &args.compare {
        let other = load_checkpoint(other_path)?;
        if other.config.window_len != ckpt.config.window_len {
            return Err(Error::Data(
                "cannot compare checkpoints with different window lengths".into(),
            ));
        }
        if (other.norm.center - ckpt.norm.center).abs() > 1e-9
            || (other.norm.scale - ckpt.norm.scale).abs() > 1e-9
        {
            return Err(Error::Data(
                "cannot compare checkpoints trained under different normalization".into(),
            ));
        }
        let mut other_model = other.build_model()?;
        let other_metrics = evaluate(&mut other_model, &ds, split_sel, space)?;
        columns.push((other.config.model.as_str().to_string(), other_metrics));
    }

    print!("{}", metrics_table(&columns, split_sel.as_str()));
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("metrics.csv"), metrics_csv(&columns))?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let cfg = args.config.load()?;
    if args.horizon == 0 {
        return Err(Error::Usage("horizon must be >= 1".into()));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let series = load_series(&cfg, &args.series)?;
    let window_len = ckpt.config.window_len;
    if series.len() < window_len {
        return Err(Error::Usage(format!(
            "series tail has {} bins but the model needs at least {window_len}",
            series.len()
        )));
    }
    let tail: Vec<f64> = series.values[series.len() - window_len..]
        .iter()
        .map(|&v| ckpt.norm.normalize(v))
        .collect();
    let mut model = ckpt.build_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
    let preds = roll_forward(&mut model, &tail, window_len, args.horizon, &mut rng)?;

    let mut csv = String::from("bin_start,predicted_volume\n");
    for (k, p) in preds.iter().enumerate() {
        let volume = ckpt.norm.denormalize(*p);
        let when = series.bin_start(series.len() + k);
        println!("{}  {volume:.3}", when.format(crate::data::TIMESTAMP_FORMAT));
        writeln!(csv, "{},{volume}", when.format(crate::data::TIMESTAMP_FORMAT)).unwrap();
    }
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, csv)?;
    }
    Ok(())
}

fn report_line(family: &str, seed: u64, report: &GradCheckReport) -> String {
    format!(
        "{family:<6} seed {seed:>2}: max rel err {:.3e}  {}",
        report.max_error(),
        if report.passed() { "PASS" } else { "FAIL" }
    )
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let activation = match args.activation.as_str() {
        "linear" => Activation::Linear,
        _ => Activation::Relu,
    };
    let mut all_passed = true;
    let mut run_family = |family: &str| -> Result<()> {
        for seed in 0..args.seeds {
            let report = match family {
                "dense" => {
                    let mut sys = dense_check_system(seed, activation);
                    gradient_check(&mut sys, args.tolerance, args.step)?
                }
                "rnn" => {
                    let mut sys = rnn_check_system(seed);
                    gradient_check(&mut sys, args.tolerance, args.step)?
                }
                _ => {
                    let mut sys = lstm_check_system(seed);
                    gradient_check(&mut sys, args.tolerance, args.step)?
                }
            };
            println!("{}", report_line(family, seed, &report));
            all_passed &= report.passed();
        }
        Ok(())
    };
    match args.layer.as_str() {
        "all" => {
            run_family("dense")?;
            run_family("rnn")?;
            run_family("lstm")?;
        }
        family => run_family(family)?,
    }
    if all_passed {
        println!("gradient check passed at tolerance {:.1e}", args.tolerance);
        Ok(())
    } else {
        Err(Error::Data(format!(
            "gradient check failed at tolerance {:.1e}",
            args.tolerance
        )))
    }
}
