//! Multi-seed training and evaluation.

use std::time::Instant;

use orthograd::calibration::{evaluate, fit_temperature, temperature_result};
use orthograd::optim::{GradientStep, Optimizer, RunLog};
use orthograd::rng::{stream, sub_stream, Stream};
use orthograd::{Network, ParamGroup, PredictionBatch};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::corrupt::{corrupt, mean_perturbation, CorruptionSpec, FeatureRange, Operator};
use crate::data::{make_dataset, Dataset, Splits};
use crate::error::{HarnessError, Result};
use crate::record::{CorruptionResult, RunFailure, RunRecord, TemperatureOutcome, SCHEMA};

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub record: RunRecord,
    pub trace: Vec<GradientStep>,
    pub network: Network,
}

/// Called after every optimizer step with the groups as they were before the
/// step (parameters and gradients) and the step's diagnostics.
pub type StepObserver<'a> = dyn FnMut(&[ParamGroup], &[GradientStep]) + 'a;

pub fn build_network(cfg: &ExperimentConfig, input_dim: usize, classes: usize, seed: u64) -> Result<Network> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&cfg.network.hidden);
    dims.push(classes);
    let mut rng = stream(seed, Stream::Init);
    Ok(Network::mlp(&dims, cfg.network.has_bias, &mut rng)?)
}

/// Mini-batch training for `cfg.epochs` epochs. Returns the per-epoch log and,
/// when `cfg.trace` is set, every step's diagnostics.
pub fn train(
    network: &mut Network,
    data: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    mut observer: Option<&mut StepObserver<'_>>,
) -> Result<(RunLog, Vec<GradientStep>)> {
    let mut optimizer = Optimizer::new(cfg.optim.clone())?;
    let mut rng = stream(seed, Stream::Batches);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = RunLog::default();
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, mut groups) = network.loss_and_grad(&x, &y)?;
            if !loss.is_finite() {
                return Err(orthograd::Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, step {}", optimizer.steps_taken()),
                    dump: format!("loss = {loss}, |theta| = {:e}", network.global_norm()),
                }
                .into());
            }
            total += loss * chunk.len() as f64;
            let before = observer.is_some().then(|| groups.clone());
            let diags = optimizer.step(&mut groups)?;
            network.load_groups(&groups)?;
            if let (Some(obs), Some(before)) = (observer.as_mut(), before) {
                obs(&before, &diags);
            }
            if cfg.trace {
                trace.extend(diags);
            }
        }
        log.push(total / data.len() as f64, network.global_norm());
    }
    Ok((log, trace))
}

pub fn predict(network: &Network, data: &Dataset) -> Result<PredictionBatch> {
    Ok(network.forward(&data.features, &data.labels)?)
}

/// Evaluates every configured corruption of the test split.
pub fn corruption_sweep(
    network: &Network,
    test: &Dataset,
    range: &FeatureRange,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<CorruptionResult>> {
    let mut out = Vec::new();
    for &operator in &cfg.corruption.operators {
        for &severity in &cfg.corruption.severities {
            // one stream per operator: every severity sees the same draws
            let mut rng = sub_stream(seed, Stream::Corruption, operator.index());
            let x = corrupt(&test.features, CorruptionSpec { operator, severity }, range, test.grid, &mut rng)?;
            let batch = network.forward(&x, &test.labels)?;
            out.push(CorruptionResult {
                operator,
                severity,
                mean_perturbation: mean_perturbation(&test.features, &x),
                report: evaluate(&batch, cfg.ece_bins)?,
            });
        }
    }
    Ok(out)
}

/// Trains and evaluates one seed on prepared splits.
pub fn run_on_splits(
    cfg: &ExperimentConfig,
    splits: &Splits,
    seed: u64,
    observer: Option<&mut StepObserver<'_>>,
) -> Result<SeedRun> {
    if splits.test.grid.is_none() && cfg.corruption.operators.contains(&Operator::BoxBlur) {
        // fail before training rather than after
        return Err(HarnessError::Config("box_blur needs grid-structured features".into()));
    }
    let start = Instant::now();
    let mut network = build_network(cfg, splits.train.dim(), splits.train.classes, seed)?;
    let initial_theta_norm = network.global_norm();
    let (log, trace) = train(&mut network, &splits.train, cfg, seed, observer)?;

    let test = predict(&network, &splits.test)?;
    let clean = evaluate(&test, cfg.ece_bins)?;
    let val = predict(&network, &splits.val)?;
    let fitted = fit_temperature(&val, cfg.ece_bins)?;
    let on_test = temperature_result(&test, fitted.t_star, fitted.degenerate, cfg.ece_bins)?;
    let corruption = corruption_sweep(&network, &splits.test, &splits.range, cfg, seed)?;

    let record = RunRecord {
        schema: SCHEMA.into(),
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        protocol_hash: cfg.protocol_hash(),
        variant: cfg.optim.variant,
        seed,
        splits: splits.summary(),
        epochs: log.epochs,
        initial_theta_norm,
        final_theta_norm: network.global_norm(),
        clean,
        temperature: TemperatureOutcome { val: fitted, test: on_test },
        corruption,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(SeedRun { record, trace, network })
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let splits = make_dataset(&cfg.dataset, cfg.label_fraction, cfg.standardize, seed)?;
    run_on_splits(cfg, &splits, seed, None)
        .map_err(|e| match e {
            HarnessError::Core(orthograd::Error::NonFinite { context, dump }) => {
                HarnessError::Core(orthograd::Error::NonFinite { context: format!("seed {seed}: {context}"), dump })
            }
            other => other,
        })
}

/// Runs every seed of `cfg`, in parallel up to `cfg.parallelism` threads.
/// Results come back in seed-list order regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<std::result::Result<SeedRun, RunFailure>>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, seed).map_err(|e| RunFailure { seed, error: e.to_string() }))
            .collect()
    }))
}
