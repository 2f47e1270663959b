//! Command-line front end.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use orthograd::calibration::{bins_to_csv, evaluate, fit_temperature, temperature_result};
use orthograd::optim::Variant;
use orthograd::{Network, PredictionBatch};
use serde::Serialize;

use crate::compare::{compare_runs, summarize, summary_csv, summary_markdown};
use crate::config::ExperimentConfig;
use crate::converge::{run_converge_check, summary_markdown as converge_summary, write_reports, ConvergeOptions, LossKind, PerpKind};
use crate::data::{make_dataset, read_csv};
use crate::error::{io_err, HarnessError, Result};
use crate::experiment::{corruption_sweep, run_experiment, run_on_splits, SeedRun};
use crate::plotdata::emit_plotdata;
use crate::record::{load_records, record_file_name, write_json, write_text, RunFailure, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "orthograd", version, about = "Orthogonalized-gradient training and calibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed of a configuration and write records, weights and summaries.
    Train(ExperimentArgs),
    /// Train two optimizer variants under one protocol and compare them.
    Compare(CompareArgs),
    /// Run the convergence checks on random analytic losses.
    ConvergeCheck(ConvergeArgs),
    /// Calibration metrics (and temperature scaling) for a file of logits.
    Calibrate(CalibrateArgs),
    /// Corruption sweep for one seed, from saved weights or a fresh run.
    CorruptEval(CorruptArgs),
    /// Summaries, comparison and plot tables from existing record directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set optim.eta=0.05` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides)?,
            None => ExperimentConfig::from_toml_str("", &self.overrides)?,
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, default_value = "sgd")]
    pub variant_a: Variant,
    #[arg(long, default_value = "perp_renorm")]
    pub variant_b: Variant,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long, value_enum, default_value = "quadratic")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Step size as a fraction of 1/k.
    #[arg(long, default_value_t = 0.9)]
    pub eta_frac: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_steps: usize,
    #[arg(long, value_enum, default_value = "plain")]
    pub variant: PerpKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out/converge")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV with a header row, one logit column per class and the integer label last.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Validation logits in the same format; enables temperature scaling.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = orthograd::calibration::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value = "out/calibrate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Seed whose splits (and, without `--weights`, training run) to use.
    #[arg(long)]
    pub seed: Option<u64>,
    /// OGW1 weights file; the seed is trained from scratch when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of `seed_*.json` records.
    #[arg(long)]
    pub records: PathBuf,
    /// Second record directory to compare against.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long, default_value = "a")]
    pub label_a: String,
    #[arg(long, default_value = "b")]
    pub label_b: String,
    #[arg(long, default_value = "out/report")]
    pub out: PathBuf,
}

/// Runs a parsed command. `Ok(false)` means some seed or instance failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => train(&a.load()?),
        Command::Compare(a) => compare(&a),
        Command::ConvergeCheck(a) => converge(&a),
        Command::Calibrate(a) => calibrate(&a).map(|_| true),
        Command::CorruptEval(a) => corrupt_eval(&a).map(|_| true),
        Command::Report(a) => report(&a).map(|_| true),
    }
}

fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_weights(path: &Path, net: &Network) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    net.write_weights(&mut w)?;
    w.flush().map_err(io_err(path))
}

/// Writes everything one configuration produced into `cfg.output_dir`:
/// `config.json`, `records/`, `weights/`, `trace/` (when tracing),
/// `summary.{md,csv}`, `timings.csv`, `failures.json` and `plots/`.
pub fn write_run_outputs(
    cfg: &ExperimentConfig,
    results: Vec<std::result::Result<SeedRun, RunFailure>>,
) -> Result<(Vec<RunRecord>, Vec<RunFailure>)> {
    let dir = &cfg.output_dir;
    write_json(&dir.join("config.json"), cfg)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut timings = String::from("seed,wall_time_s\n");
    for result in results {
        match result {
            Ok(run) => {
                let seed = run.record.seed;
                write_json(&dir.join("records").join(record_file_name(seed)), &run.record)?;
                write_weights(&dir.join("weights").join(format!("seed_{seed}.ogw")), &run.network)?;
                if cfg.trace {
                    write_ndjson(&dir.join("trace").join(format!("seed_{seed}.ndjson")), &run.trace)?;
                }
                timings.push_str(&format!("{seed},{}\n", run.record.wall_time_s));
                records.push(run.record);
            }
            Err(f) => {
                eprintln!("seed {} failed: {}", f.seed, f.error);
                failures.push(f);
            }
        }
    }
    write_text(&dir.join("timings.csv"), &timings)?;
    let failures_path = dir.join("failures.json");
    if failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).map_err(io_err(&failures_path))?;
        }
    } else {
        write_json(&failures_path, &failures)?;
    }
    if !records.is_empty() {
        let rows = summarize(&records)?;
        write_text(&dir.join("summary.md"), &summary_markdown(&cfg.optim.variant.to_string(), &rows))?;
        write_text(&dir.join("summary.csv"), &summary_csv(&rows))?;
        let label = cfg.optim.variant.to_string();
        emit_plotdata(&[(label.as_str(), &records)], &dir.join("plots"))?;
    }
    Ok((records, failures))
}

fn train(cfg: &ExperimentConfig) -> Result<bool> {
    let results = run_experiment(cfg)?;
    let (records, failures) = write_run_outputs(cfg, results)?;
    println!("{}: {} seeds ok, {} failed -> {}", cfg.name, records.len(), failures.len(), cfg.output_dir.display());
    Ok(failures.is_empty())
}

fn write_comparison(
    dir: &Path,
    a: &[RunRecord],
    b: &[RunRecord],
    label_a: &str,
    label_b: &str,
) -> Result<()> {
    let report = compare_runs(a, b, label_a, label_b)?;
    write_text(&dir.join("comparison.md"), &report.to_markdown())?;
    write_text(&dir.join("comparison.csv"), &report.to_csv())?;
    write_text(&dir.join("comparison_corruption.csv"), &report.corruption_csv())?;
    write_json(&dir.join("comparison.json"), &report)?;
    emit_plotdata(&[(label_a, a), (label_b, b)], &dir.join("plots"))?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<bool> {
    let base = args.experiment.load()?;
    if args.variant_a == args.variant_b {
        return Err(HarnessError::Config("--variant-a and --variant-b must differ".into()));
    }
    let mut groups = Vec::new();
    let mut all_ok = true;
    for variant in [args.variant_a, args.variant_b] {
        let mut cfg = base.with_variant(variant);
        cfg.output_dir = base.output_dir.join(variant.as_str());
        let results = run_experiment(&cfg)?;
        let (records, failures) = write_run_outputs(&cfg, results)?;
        all_ok &= failures.is_empty();
        groups.push(records);
    }
    let (a, b) = (&groups[0], &groups[1]);
    // only seeds that succeeded on both sides are compared
    let common: Vec<u64> = a.iter().map(|r| r.seed).filter(|s| b.iter().any(|r| r.seed == *s)).collect();
    let pick = |g: &[RunRecord]| g.iter().filter(|r| common.contains(&r.seed)).cloned().collect::<Vec<_>>();
    write_comparison(&base.output_dir, &pick(a), &pick(b), args.variant_a.as_str(), args.variant_b.as_str())?;
    Ok(all_ok)
}

fn converge(args: &ConvergeArgs) -> Result<bool> {
    let opts = ConvergeOptions {
        loss: args.loss,
        dim: args.dim,
        instances: args.instances,
        eta_frac: args.eta_frac,
        max_steps: args.max_steps,
        variant: args.variant,
        seed: args.seed,
        ..Default::default()
    };
    let reports = run_converge_check(&opts)?;
    write_reports(&args.out, &reports)?;
    print!("{}", converge_summary(&reports));
    Ok(reports.iter().all(|r| r.passed() != Some(false)))
}

fn read_predictions(path: &Path) -> Result<PredictionBatch> {
    let (logits, labels) = read_csv(path)?;
    Ok(PredictionBatch::from_logits(logits, labels)?)
}

#[derive(Debug, Serialize)]
struct CalibrateOutput {
    report: orthograd::calibration::CalibrationReport,
    temperature: Option<crate::record::TemperatureOutcome>,
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let test = read_predictions(&args.predictions)?;
    let report = evaluate(&test, args.bins)?;
    let temperature = match &args.val {
        Some(v) => {
            let val = read_predictions(v)?;
            if val.num_classes() != test.num_classes() {
                return Err(HarnessError::Config(format!(
                    "validation file has {} classes, predictions have {}",
                    val.num_classes(),
                    test.num_classes()
                )));
            }
            let fitted = fit_temperature(&val, args.bins)?;
            let on_test = temperature_result(&test, fitted.t_star, fitted.degenerate, args.bins)?;
            Some(crate::record::TemperatureOutcome { val: fitted, test: on_test })
        }
        None => None,
    };
    write_text(&args.out.join("reliability.csv"), &bins_to_csv(&report.bins))?;
    let out = CalibrateOutput { report, temperature };
    write_json(&args.out.join("calibration.json"), &out)?;
    println!(
        "ECE {:.4}  NLL {:.4}  Brier {:.4}  top1 {:.4}",
        out.report.ece, out.report.nll, out.report.brier, out.report.top1_acc
    );
    if let Some(t) = &out.temperature {
        println!("T* {:.4}  test ECE {:.4} -> {:.4}", t.val.t_star, t.test.ece_before, t.test.ece_after);
    }
    Ok(())
}

fn corrupt_eval(args: &CorruptArgs) -> Result<()> {
    let cfg = args.experiment.load()?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let splits = make_dataset(&cfg.dataset, cfg.label_fraction, cfg.standardize, seed)?;
    let results = match &args.weights {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(io_err(path))?;
            let net = Network::read_weights(std::io::BufReader::new(file))?;
            if net.input_dim() != splits.test.dim() || net.output_dim() != splits.test.classes {
                return Err(HarnessError::Config(format!(
                    "weights map {} -> {} but the data has {} features and {} classes",
                    net.input_dim(),
                    net.output_dim(),
                    splits.test.dim(),
                    splits.test.classes
                )));
            }
            corruption_sweep(&net, &splits.test, &splits.range, &cfg, seed)?
        }
        None => run_on_splits(&cfg, &splits, seed, None)?.record.corruption,
    };
    let dir = &cfg.output_dir;
    write_json(&dir.join(format!("corrupt_eval_seed_{seed}.json")), &results)?;
    let mut csv = String::from("operator,severity,mean_perturbation,top1_acc,nll,ece,brier,mean_entropy\n");
    for c in &results {
        let r = &c.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.operator, c.severity, c.mean_perturbation, r.top1_acc, r.nll, r.ece, r.brier, r.mean_entropy
        ));
    }
    write_text(&dir.join(format!("corrupt_eval_seed_{seed}.csv")), &csv)?;
    print!("{csv}");
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let a = load_records(&args.records)?;
    match &args.against {
        Some(other) => {
            let b = load_records(other)?;
            write_comparison(&args.out, &a, &b, &args.label_a, &args.label_b)?;
        }
        None => {
            let rows = summarize(&a)?;
            let md = summary_markdown(&args.label_a, &rows);
            write_text(&args.out.join("summary.md"), &md)?;
            write_text(&args.out.join("summary.csv"), &summary_csv(&rows))?;
            emit_plotdata(&[(args.label_a.as_str(), &a)], &args.out.join("plots"))?;
            print!("{md}");
        }
    }
    Ok(())
}
