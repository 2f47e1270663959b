//! Batches of full-gradient convergence checks on analytic losses.

use std::path::{Path, PathBuf};

use orthograd::convergence::{
    check_descent_inequality, run_plain_perp, run_renorm_perp, AnalyticLoss, ConvergenceReport, DescentCheck,
    RenormOutcome, RenormReport,
};
use orthograd::optim::OptimConfig;
use orthograd::rng::{sub_stream, Rng, Stream};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::record::{write_json, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PerpKind {
    Plain,
    Renorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeOptions {
    pub loss: LossKind,
    pub dim: usize,
    pub instances: usize,
    /// Step size as a fraction of `1/k`.
    pub eta_frac: f64,
    pub max_steps: usize,
    pub variant: PerpKind,
    pub seed: u64,
    /// Eigenvalue range of random quadratics.
    pub eig_range: (f64, f64),
    /// Points per random logistic problem.
    pub points: usize,
    pub l2: f64,
    pub epsilon: f64,
}

impl Default for ConvergeOptions {
    fn default() -> Self {
        Self {
            loss: LossKind::Quadratic,
            dim: 20,
            instances: 20,
            eta_frac: 0.9,
            max_steps: 200_000,
            variant: PerpKind::Plain,
            seed: 0,
            eig_range: (0.1, 10.0),
            points: 200,
            l2: 1e-2,
            epsilon: OptimConfig::default().epsilon,
        }
    }
}

impl ConvergeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.instances == 0 {
            return Err(HarnessError::Config("dim and instances must be positive".into()));
        }
        if self.loss == LossKind::Logistic && self.dim != 2 {
            return Err(HarnessError::Config(format!("logistic loss is 2-dimensional, got --dim {}", self.dim)));
        }
        if !(self.eta_frac > 0.0) {
            return Err(HarnessError::Config(format!("eta-frac must be positive, got {}", self.eta_frac)));
        }
        if self.variant == PerpKind::Plain && self.eta_frac >= 1.0 {
            return Err(HarnessError::Config("the plain variant needs eta-frac < 1 (eta < 1/k)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainResult {
    pub report: ConvergenceReport,
    pub descent: DescentCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: usize,
    pub loss: LossKind,
    pub dim: usize,
    pub lipschitz_k: f64,
    pub eta: f64,
    pub theta0: Vec<f64>,
    pub plain: Option<PlainResult>,
    pub renorm: Option<RenormReport>,
}

impl InstanceReport {
    /// Plain runs: reached the stationarity target with no descent-bound
    /// violations. Renormalized runs carry no guarantee and have no verdict.
    pub fn passed(&self) -> Option<bool> {
        self.plain
            .as_ref()
            .map(|p| p.report.converged && p.descent.violations == 0 && p.descent.summability_bound_satisfied)
    }
}

fn instance_problem(opts: &ConvergeOptions, rng: &mut Rng) -> Result<(AnalyticLoss, Vec<f64>)> {
    let loss = match opts.loss {
        LossKind::Quadratic => AnalyticLoss::random_quadratic(opts.dim, opts.eig_range, rng)?,
        LossKind::Logistic => AnalyticLoss::random_logistic_2d(opts.points, opts.l2, rng)?,
    };
    let theta0 = (0..loss.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((loss, theta0))
}

pub fn run_instance(opts: &ConvergeOptions, instance: usize) -> Result<InstanceReport> {
    let mut rng = sub_stream(opts.seed, Stream::Probe, instance as u64);
    let (loss, theta0) = instance_problem(opts, &mut rng)?;
    let k = loss.lipschitz_k();
    let eta = opts.eta_frac / k;
    let (plain, renorm) = match opts.variant {
        PerpKind::Plain => {
            let (report, traj) = run_plain_perp(&loss, &theta0, eta, opts.max_steps)?;
            let descent = check_descent_inequality(&loss, &traj, eta, k);
            (Some(PlainResult { report, descent }), None)
        }
        PerpKind::Renorm => {
            let tol = OptimConfig::default().parallel_tol;
            (None, Some(run_renorm_perp(&loss, &theta0, eta, opts.epsilon, tol, opts.max_steps)?))
        }
    };
    Ok(InstanceReport { instance, loss: opts.loss, dim: loss.dim(), lipschitz_k: k, eta, theta0, plain, renorm })
}

/// Runs every instance (in parallel; results are in instance order).
pub fn run_converge_check(opts: &ConvergeOptions) -> Result<Vec<InstanceReport>> {
    opts.validate()?;
    (0..opts.instances).into_par_iter().map(|i| run_instance(opts, i)).collect()
}

fn outcome_name(o: RenormOutcome) -> &'static str {
    match o {
        RenormOutcome::Stabilized => "stabilized",
        RenormOutcome::GradNormVanishing => "grad_norm_vanishing",
        RenormOutcome::NonConvergent => "non_convergent",
    }
}

pub fn summary_markdown(reports: &[InstanceReport]) -> String {
    let plain = reports.iter().any(|r| r.plain.is_some());
    let mut out = if plain {
        let passed = reports.iter().filter(|r| r.passed() == Some(true)).count();
        format!("{passed}/{} instances passed\n\n", reports.len())
    } else {
        let count = |o| reports.iter().filter(|r| r.renorm.as_ref().is_some_and(|n| n.outcome == o)).count();
        format!(
            "stabilized {}, grad_norm_vanishing {}, non_convergent {} (of {})\n\n",
            count(RenormOutcome::Stabilized),
            count(RenormOutcome::GradNormVanishing),
            count(RenormOutcome::NonConvergent),
            reports.len()
        )
    };
    if plain {
        out.push_str("| Instance | Dim | k | Steps | Gap | Violations | Summability | Pass |\n|---|---|---|---|---|---|---|---|\n");
    } else {
        out.push_str("| Instance | Dim | k | Steps | Outcome | Skip fired | Final grad norm |\n|---|---|---|---|---|---|---|\n");
    }
    for r in reports {
        let cells = match (&r.plain, &r.renorm) {
            (Some(p), _) => format!(
                "{} | {:.3e} | {} | {}",
                p.report.steps_taken, p.report.stationarity_gap, p.descent.violations, p.descent.summability_bound_satisfied
            ),
            (None, Some(n)) => format!(
                "{} | {} | {} | {:.3e}",
                n.steps_taken,
                outcome_name(n.outcome),
                n.skip_fired,
                n.final_grad_norm
            ),
            (None, None) => "- | - | - | -".into(),
        };
        let verdict = match r.passed() {
            Some(true) => " yes |",
            Some(false) => " no |",
            None => "",
        };
        out.push_str(&format!("| {} | {} | {:.4} | {cells} |{verdict}\n", r.instance, r.dim, r.lipschitz_k));
    }
    out
}

/// Writes `instance_{i}.json` per instance plus `summary.md` into `dir`.
pub fn write_reports(dir: &Path, reports: &[InstanceReport]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in reports {
        let p = dir.join(format!("instance_{}.json", r.instance));
        write_json(&p, r)?;
        paths.push(p);
    }
    let p = dir.join("summary.md");
    write_text(&p, &summary_markdown(reports))?;
    paths.push(p);
    Ok(paths)
}
