//! Heavy-ball SGD and the orthogonalized-gradient variants.
//!
//! Every variant runs per [`ParamGroup`]. The orthogonalized variants first
//! strip from the raw gradient its component along the group's parameter
//! vector, optionally rescale the result back to the raw gradient norm, and
//! then hand it to the same momentum / weight-decay rule SGD uses:
//!
//! ```text
//! d   = direction + weight_decay * theta
//! buf = momentum * buf + d          (buf = d on the first step)
//! theta <- theta - eta * buf
//! ```
//!
//! Weight decay is added after orthogonalization, so it still shrinks
//! `theta`. The momentum buffer holds already-orthogonalized directions and
//! is not projected again against the current parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamGroup;
use crate::tensor::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain heavy-ball SGD.
    Sgd,
    /// Orthogonalize, rescale to the raw gradient norm, then step.
    PerpRenorm,
    /// Orthogonalize, then step.
    PerpPlain,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sgd => "sgd",
            Variant::PerpRenorm => "perp_renorm",
            Variant::PerpPlain => "perp_plain",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Variant::Sgd),
            "perp_renorm" | "renorm" => Ok(Variant::PerpRenorm),
            "perp_plain" | "plain" => Ok(Variant::PerpPlain),
            other => Err(Error::Argument(format!("unknown optimizer variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub eta: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub variant: Variant,
    /// Added to `||g||` in the renormalization denominator.
    pub epsilon: f64,
    /// Orthogonalize 1-D groups (biases) too.
    pub orthogonalize_biases: bool,
    /// Below this parameter norm the projection is skipped and the raw
    /// gradient passes through.
    pub min_theta_norm: f64,
    /// The renormalized variant treats `||g|| <= parallel_tol * ||grad||` as a
    /// gradient parallel to `theta` and leaves the group untouched.
    pub parallel_tol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            variant: Variant::PerpRenorm,
            epsilon: 1e-30,
            orthogonalize_biases: false,
            min_theta_norm: 1e-12,
            parallel_tol: 1e-12,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.min_theta_norm >= 0.0) || !(self.parallel_tol >= 0.0) {
            return Err(Error::Config("min_theta_norm and parallel_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-group diagnostics of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientStep {
    pub step: u64,
    pub group_id: String,
    pub raw_grad_norm: f64,
    pub ortho_grad_norm: f64,
    /// Norm of the direction handed to the base update rule.
    pub renorm_grad_norm: f64,
    /// `<grad, theta>` before the update.
    pub inner_product: f64,
    pub theta_norm: f64,
    pub cos_alignment: f64,
    /// `<g, theta>` of the projected direction; `None` when no projection ran
    /// (SGD, bypassed 1-D groups, pass-through).
    pub ortho_inner_product: Option<f64>,
    pub skipped: bool,
    /// `||theta||` was below `min_theta_norm` and the projection was bypassed.
    pub passthrough: bool,
}

/// Result of projecting a gradient off its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonalized {
    pub g: Vec<f64>,
    pub passthrough: bool,
}

/// `grad - (<grad, theta> / ||theta||^2) theta`.
///
/// The projection is applied twice; the second pass removes the rounding
/// residue of the first so that `<g, theta>` stays at machine precision even
/// when `grad` is nearly parallel to `theta`. When `||theta|| < min_theta_norm`
/// the projection is undefined and `grad` is returned unchanged.
pub fn orthogonalize(theta: &[f64], grad: &[f64], min_theta_norm: f64) -> Orthogonalized {
    assert_eq!(theta.len(), grad.len(), "theta and grad must have equal length");
    let tt = dot(theta, theta);
    if tt.sqrt() < min_theta_norm || tt == 0.0 {
        return Orthogonalized { g: grad.to_vec(), passthrough: true };
    }
    let mut g = grad.to_vec();
    for _ in 0..2 {
        let coef = dot(&g, theta) / tt;
        for (gi, &ti) in g.iter_mut().zip(theta) {
            *gi -= coef * ti;
        }
    }
    Orthogonalized { g, passthrough: false }
}

/// `(raw_grad_norm / (||g|| + epsilon)) g`, or `None` when `g` is zero and
/// the update must be skipped.
pub fn renormalize(g: &[f64], raw_grad_norm: f64, epsilon: f64) -> Option<Vec<f64>> {
    let gn = norm(g);
    if gn == 0.0 {
        return None;
    }
    let scale = raw_grad_norm / (gn + epsilon);
    Some(g.iter().map(|x| x * scale).collect())
}

/// Stateful optimizer over named parameter groups.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimConfig,
    buffers: BTreeMap<String, Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, buffers: BTreeMap::new(), steps: 0 })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every group in place, returning diagnostics.
    /// A non-finite gradient aborts before any group is modified.
    pub fn step(&mut self, groups: &mut [ParamGroup]) -> Result<Vec<GradientStep>> {
        for g in groups.iter() {
            if let Some(i) = g.grad.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of {} at step {}", g.group_id, self.steps),
                    dump: format!(
                        "index {i} = {}, |theta| = {:e}, finite theta: {}",
                        g.grad[i],
                        norm(&g.theta),
                        g.theta.iter().all(|v| v.is_finite())
                    ),
                });
            }
        }
        let step = self.steps;
        let diags = groups.iter_mut().map(|g| self.step_group(step, g)).collect();
        self.steps += 1;
        Ok(diags)
    }

    fn step_group(&mut self, step: u64, group: &mut ParamGroup) -> GradientStep {
        let cfg = &self.config;
        let theta = &group.theta;
        let grad = &group.grad;
        let raw_grad_norm = norm(grad);
        let theta_norm = norm(theta);
        let inner_product = dot(grad, theta);
        let cos_alignment = if raw_grad_norm > 0.0 && theta_norm > 0.0 {
            inner_product / (raw_grad_norm * theta_norm)
        } else {
            0.0
        };
        let mut diag = GradientStep {
            step,
            group_id: group.group_id.clone(),
            raw_grad_norm,
            ortho_grad_norm: raw_grad_norm,
            renorm_grad_norm: raw_grad_norm,
            inner_product,
            theta_norm,
            cos_alignment,
            ortho_inner_product: None,
            skipped: false,
            passthrough: false,
        };

        let bypass = group.ndim < 2 && !cfg.orthogonalize_biases;
        let direction = match cfg.variant {
            Variant::Sgd => grad.clone(),
            _ if bypass => grad.clone(),
            variant => {
                let Orthogonalized { g, passthrough } = orthogonalize(theta, grad, cfg.min_theta_norm);
                let gn = norm(&g);
                diag.passthrough = passthrough;
                diag.ortho_grad_norm = gn;
                if !passthrough {
                    diag.ortho_inner_product = Some(dot(&g, theta));
                }
                match variant {
                    Variant::PerpPlain => {
                        diag.renorm_grad_norm = gn;
                        g
                    }
                    _ => {
                        let parallel = gn <= cfg.parallel_tol * raw_grad_norm;
                        match renormalize(&g, raw_grad_norm, cfg.epsilon) {
                            Some(hat) if !parallel => {
                                diag.renorm_grad_norm = norm(&hat);
                                hat
                            }
                            _ => {
                                diag.skipped = true;
                                diag.renorm_grad_norm = 0.0;
                                return diag;
                            }
                        }
                    }
                }
            }
        };

        let mut d = direction;
        if cfg.weight_decay != 0.0 {
            for (di, &ti) in d.iter_mut().zip(theta) {
                *di += cfg.weight_decay * ti;
            }
        }
        let update = if cfg.momentum != 0.0 {
            match self.buffers.get_mut(&group.group_id) {
                Some(buf) => {
                    for (b, &di) in buf.iter_mut().zip(&d) {
                        *b = cfg.momentum * *b + di;
                    }
                    buf.clone()
                }
                None => {
                    self.buffers.insert(group.group_id.clone(), d.clone());
                    d
                }
            }
        } else {
            d
        };
        for (t, u) in group.theta.iter_mut().zip(&update) {
            *t -= cfg.eta * u;
        }
        diag
    }
}

/// Euclidean norm over all groups' parameters.
pub fn global_norm(groups: &[ParamGroup]) -> f64 {
    groups.iter().map(|g| dot(&g.theta, &g.theta)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub theta_norm: f64,
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochLog>,
}

impl RunLog {
    pub fn push(&mut self, train_loss: f64, theta_norm: f64) {
        let epoch = self.epochs.len();
        self.epochs.push(EpochLog { epoch, train_loss, theta_norm });
    }
}

/// Global parameter norm per epoch.
pub fn trajectory_norms(log: &RunLog) -> Vec<f64> {
    log.epochs.iter().map(|e| e.theta_norm).collect()
}
