//! Numerical checks of orthogonalized descent on analytic losses.
//!
//! For a loss with `k`-Lipschitz gradient and a step `eta < 1/k`, the
//! non-renormalized update `theta <- theta - eta * g` (with `g` the gradient
//! projected off `theta`) satisfies
//!
//! ```text
//! L(theta_{n+1}) <= L(theta_n) - eta (1 - eta k / 2) ||g_n||^2
//! ```
//!
//! so `sum ||g_n||^2` is bounded by `(L(theta_0) - L_inf) / (eta (1 - eta k / 2))`
//! and the iterates settle where the gradient is parallel to `theta`. The
//! functions here run that iteration, record the quantities the bound talks
//! about, and count any step where it fails.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::argmax;
use crate::error::{Error, Result};
use crate::net::{Network, ParamGroup};
use crate::optim::{orthogonalize, renormalize};
use crate::rng::Rng;
use crate::tensor::{dot, norm, Tensor};

/// Iteration stops once `||g|| < ORTHO_STOP`.
pub const ORTHO_STOP: f64 = 1e-10;
/// Gradient norm below which a renormalized run counts as vanishing.
pub const GRAD_VANISH: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticLoss {
    /// `0.5 (theta - c)^T A (theta - c)` with `A` symmetric positive definite.
    ShiftedQuadratic { center: Vec<f64>, matrix: Vec<f64>, lipschitz_k: f64 },
    /// Mean logistic loss of a linear classifier on 2-D points with labels
    /// in `{-1, +1}`, plus `0.5 * l2 * ||theta||^2`.
    Logistic2d { points: Vec<[f64; 2]>, labels: Vec<f64>, l2: f64, lipschitz_k: f64 },
}

impl AnalyticLoss {
    /// Quadratic with an explicit SPD matrix; `k` is its largest eigenvalue.
    pub fn shifted_quadratic(center: Vec<f64>, matrix: Vec<f64>) -> Result<Self> {
        let p = center.len();
        if matrix.len() != p * p || p == 0 {
            return Err(Error::Config(format!("matrix must be {p}x{p}")));
        }
        for i in 0..p {
            for j in 0..i {
                if (matrix[i * p + j] - matrix[j * p + i]).abs() > 1e-12 * (1.0 + matrix[i * p + j].abs()) {
                    return Err(Error::Config("quadratic matrix must be symmetric".into()));
                }
            }
        }
        let eig = symmetric_eigenvalues(&matrix, p);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(min > 0.0) {
            return Err(Error::Config(format!("quadratic matrix is not positive definite (min eigenvalue {min})")));
        }
        Ok(Self::ShiftedQuadratic { center, matrix, lipschitz_k: max })
    }

    /// Random SPD quadratic `Q diag(lambda) Q^T` with eigenvalues drawn
    /// uniformly from `eig_range`; the largest drawn eigenvalue is `k`.
    pub fn random_quadratic(dim: usize, eig_range: (f64, f64), rng: &mut Rng) -> Result<Self> {
        let (lo, hi) = eig_range;
        if dim == 0 || !(lo > 0.0) || hi < lo {
            return Err(Error::Argument(format!("bad quadratic spec dim={dim} eig_range={eig_range:?}")));
        }
        let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
        let q = random_orthogonal(dim, rng);
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v: f64 = (0..dim).map(|l| q[i * dim + l] * eig[l] * q[j * dim + l]).sum();
                matrix[i * dim + j] = v;
                matrix[j * dim + i] = v;
            }
        }
        let center = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let lipschitz_k = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self::ShiftedQuadratic { center, matrix, lipschitz_k })
    }

    /// Logistic loss on labelled 2-D points; `k = 0.25 * lambda_max(X^T X / N) + l2`.
    pub fn logistic_2d(points: Vec<[f64; 2]>, labels: Vec<f64>, l2: f64) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::Config("logistic loss needs one label per point".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Config("logistic labels must be -1 or +1".into()));
        }
        if !(l2 >= 0.0) {
            return Err(Error::Config("l2 must be >= 0".into()));
        }
        let n = points.len() as f64;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for p in &points {
            a += p[0] * p[0];
            b += p[0] * p[1];
            c += p[1] * p[1];
        }
        let (a, b, c) = (a / n, b / n, c / n);
        let lmax = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        Ok(Self::Logistic2d { points, labels, l2, lipschitz_k: 0.25 * lmax + l2 })
    }

    /// Two Gaussian clusters at `(+-1, +-0.5)` with unit spread.
    pub fn random_logistic_2d(n: usize, l2: f64, rng: &mut Rng) -> Result<Self> {
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x0: f64 = rng.sample(StandardNormal);
            let x1: f64 = rng.sample(StandardNormal);
            points.push([y * 1.0 + x0, y * 0.5 + x1]);
            labels.push(y);
        }
        Self::logistic_2d(points, labels, l2)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ShiftedQuadratic { center, .. } => center.len(),
            Self::Logistic2d { .. } => 2,
        }
    }

    pub fn lipschitz_k(&self) -> f64 {
        match self {
            Self::ShiftedQuadratic { lipschitz_k, .. } | Self::Logistic2d { lipschitz_k, .. } => *lipschitz_k,
        }
    }

    /// A lower bound on the loss (both families are non-negative).
    pub fn lower_bound(&self) -> f64 {
        0.0
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Self::ShiftedQuadratic { center, matrix, .. } => {
                let p = center.len();
                let d: Vec<f64> = theta.iter().zip(center).map(|(t, c)| t - c).collect();
                let mut acc = 0.0;
                for i in 0..p {
                    acc += d[i] * dot(&matrix[i * p..(i + 1) * p], &d);
                }
                0.5 * acc
            }
            Self::Logistic2d { points, labels, l2, .. } => {
                let n = points.len() as f64;
                let data: f64 = points
                    .iter()
                    .zip(labels)
                    .map(|(x, y)| softplus(-y * (theta[0] * x[0] + theta[1] * x[1])))
                    .sum();
                data / n + 0.5 * l2 * dot(theta, theta)
            }
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Self::ShiftedQuadratic { center, matrix, .. } => {
                let p = center.len();
                let d: Vec<f64> = theta.iter().zip(center).map(|(t, c)| t - c).collect();
                (0..p).map(|i| dot(&matrix[i * p..(i + 1) * p], &d)).collect()
            }
            Self::Logistic2d { points, labels, l2, .. } => {
                let n = points.len() as f64;
                let mut g = [0.0; 2];
                for (x, y) in points.iter().zip(labels) {
                    let m = y * (theta[0] * x[0] + theta[1] * x[1]);
                    let w = -y * sigmoid(-m) / n;
                    g[0] += w * x[0];
                    g[1] += w * x[1];
                }
                vec![g[0] + l2 * theta[0], g[1] + l2 * theta[1]]
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `dim x dim` orthogonal matrix from Gram-Schmidt on Gaussian rows.
fn random_orthogonal(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let c = dot(&v, r);
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows.concat()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(matrix: &[f64], p: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * p + j].powi(2))
            .sum();
        let diag: f64 = (0..p).map(|i| a[i * p + i].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                let aij = a[i * p + j];
                if aij == 0.0 {
                    continue;
                }
                let theta = (a[j * p + j] - a[i * p + i]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let aki = a[k * p + i];
                    let akj = a[k * p + j];
                    a[k * p + i] = c * aki - s * akj;
                    a[k * p + j] = s * aki + c * akj;
                }
                for k in 0..p {
                    let aik = a[i * p + k];
                    let ajk = a[j * p + k];
                    a[i * p + k] = c * aik - s * ajk;
                    a[j * p + k] = s * aik + c * ajk;
                }
            }
        }
    }
    (0..p).map(|i| a[i * p + i]).collect()
}

/// Loss and squared orthogonalized-gradient norm at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub loss: f64,
    pub ortho_grad_sq: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub final_theta: Vec<f64>,
    /// `|cos(grad L(theta*), theta*)|`.
    pub final_alignment: f64,
    pub final_grad_norm: f64,
    pub final_ortho_grad_norm: f64,
    pub steps_taken: usize,
    pub converged: bool,
    /// `min(1 - |cos|, ||grad L||)` at the final iterate.
    pub stationarity_gap: f64,
    pub descent_violations: usize,
    pub summability_bound_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub steps_checked: usize,
    pub violations: usize,
    pub worst_excess: f64,
    pub grad_sq_sum: f64,
    pub summability_bound: f64,
    pub summability_bound_satisfied: bool,
}

fn alignment(grad: &[f64], theta: &[f64]) -> f64 {
    let gn = norm(grad);
    let tn = norm(theta);
    if gn == 0.0 || tn == 0.0 {
        1.0
    } else {
        (dot(grad, theta) / (gn * tn)).abs().min(1.0)
    }
}

/// Runs the non-renormalized update without checking the step-size
/// hypothesis. Stops when `||g|| < ORTHO_STOP` or after `max_steps` updates.
pub fn plain_perp_trajectory(
    loss: &AnalyticLoss,
    theta0: &[f64],
    eta: f64,
    max_steps: usize,
) -> (Vec<f64>, Trajectory, bool) {
    let mut theta = theta0.to_vec();
    let mut traj = Trajectory::default();
    let mut converged = false;
    for step in 0..=max_steps {
        let grad = loss.grad(&theta);
        let g = orthogonalize(&theta, &grad, 0.0).g;
        let gsq = dot(&g, &g);
        traj.points.push(TrajectoryPoint { loss: loss.value(&theta), ortho_grad_sq: gsq });
        if gsq.sqrt() < ORTHO_STOP {
            converged = true;
            break;
        }
        if step == max_steps || !gsq.is_finite() {
            break;
        }
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= eta * gi;
        }
    }
    (theta, traj, converged)
}

/// Non-renormalized orthogonalized descent under the theorem's hypotheses.
pub fn run_plain_perp(
    loss: &AnalyticLoss,
    theta0: &[f64],
    eta: f64,
    max_steps: usize,
) -> Result<(ConvergenceReport, Trajectory)> {
    let k = loss.lipschitz_k();
    if !(eta > 0.0 && eta < 1.0 / k) {
        return Err(Error::Argument(format!("eta {eta} outside (0, 1/k) with k = {k}")));
    }
    if theta0.len() != loss.dim() {
        return Err(Error::Config(format!("theta0 has {} entries, loss expects {}", theta0.len(), loss.dim())));
    }
    if norm(theta0) == 0.0 {
        return Err(Error::Argument("theta0 must be non-zero".into()));
    }
    let (theta, traj, converged) = plain_perp_trajectory(loss, theta0, eta, max_steps);
    let check = check_descent_inequality(loss, &traj, eta, k);
    let grad = loss.grad(&theta);
    let final_grad_norm = norm(&grad);
    let final_alignment = alignment(&grad, &theta);
    let final_ortho_grad_norm = traj.points.last().map_or(0.0, |p| p.ortho_grad_sq.sqrt());
    let report = ConvergenceReport {
        steps_taken: traj.points.len() - 1,
        final_alignment,
        final_grad_norm,
        final_ortho_grad_norm,
        converged,
        stationarity_gap: (1.0 - final_alignment).min(final_grad_norm),
        descent_violations: check.violations,
        summability_bound_satisfied: check.summability_bound_satisfied,
        final_theta: theta,
    };
    Ok((report, traj))
}

/// Counts steps where `L(n+1) > L(n) - eta (1 - eta k / 2) ||g_n||^2` beyond
/// an absolute tolerance of `1e-10 * max(1, |L(n)|)`, and checks the
/// summability bound with `1e-8` relative slack.
pub fn check_descent_inequality(loss: &AnalyticLoss, traj: &Trajectory, eta: f64, k: f64) -> DescentCheck {
    let coef = eta * (1.0 - eta * k / 2.0);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for w in traj.points.windows(2) {
        let (cur, next) = (w[0], w[1]);
        let bound = cur.loss - coef * cur.ortho_grad_sq;
        let excess = next.loss - bound;
        worst_excess = worst_excess.max(excess);
        if !(excess <= 1e-10 * cur.loss.abs().max(1.0)) {
            violations += 1;
        }
    }
    // the last point is where iteration stopped; its g was never applied
    let steps = traj.points.len().saturating_sub(1);
    let grad_sq_sum: f64 = traj.points[..steps].iter().map(|p| p.ortho_grad_sq).sum();
    let l0 = traj.points.first().map_or(0.0, |p| p.loss);
    let summability_bound = (l0 - loss.lower_bound()) / coef;
    let summability_bound_satisfied =
        coef > 0.0 && grad_sq_sum <= summability_bound + 1e-8 * summability_bound.abs().max(1e-300);
    DescentCheck {
        steps_checked: steps,
        violations,
        worst_excess: if steps == 0 { 0.0 } else { worst_excess },
        grad_sq_sum,
        summability_bound,
        summability_bound_satisfied,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenormOutcome {
    /// The skip branch fired: the gradient was parallel to `theta`.
    Stabilized,
    /// `||grad L||` fell below `GRAD_VANISH` while the iterates settled.
    GradNormVanishing,
    /// Neither happened within the step budget.
    NonConvergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationStats {
    pub window: usize,
    pub loss_min: f64,
    pub loss_max: f64,
    pub loss_increases: usize,
    pub mean_step_norm: f64,
    pub final_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormReport {
    pub outcome: RenormOutcome,
    pub steps_taken: usize,
    pub skip_fired: bool,
    pub final_theta: Vec<f64>,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub oscillation: Option<OscillationStats>,
}

/// Renormalized orthogonalized descent, classified by how it ends.
pub fn run_renorm_perp(
    loss: &AnalyticLoss,
    theta0: &[f64],
    eta: f64,
    epsilon: f64,
    parallel_tol: f64,
    max_steps: usize,
) -> Result<RenormReport> {
    if norm(theta0) == 0.0 {
        return Err(Error::Argument("theta0 must be non-zero".into()));
    }
    if !(eta > 0.0 && epsilon > 0.0) {
        return Err(Error::Argument("eta and epsilon must be > 0".into()));
    }
    const WINDOW: usize = 1000;
    let mut theta = theta0.to_vec();
    let mut recent: std::collections::VecDeque<(f64, f64)> = std::collections::VecDeque::new();
    let mut outcome = RenormOutcome::NonConvergent;
    let mut skip_fired = false;
    let mut steps = 0;
    while steps <= max_steps {
        let grad = loss.grad(&theta);
        let gn = norm(&grad);
        let g = orthogonalize(&theta, &grad, 0.0).g;
        let hat = match renormalize(&g, gn, epsilon) {
            Some(hat) if norm(&g) > parallel_tol * gn => hat,
            _ => {
                skip_fired = true;
                outcome = RenormOutcome::Stabilized;
                break;
            }
        };
        if gn < GRAD_VANISH {
            outcome = RenormOutcome::GradNormVanishing;
            break;
        }
        if steps == max_steps {
            break;
        }
        let value = loss.value(&theta);
        for (t, h) in theta.iter_mut().zip(&hat) {
            *t -= eta * h;
        }
        recent.push_back((value, eta * norm(&hat)));
        if recent.len() > WINDOW {
            recent.pop_front();
        }
        steps += 1;
    }
    let grad = loss.grad(&theta);
    let oscillation = (outcome == RenormOutcome::NonConvergent && !recent.is_empty()).then(|| {
        let losses: Vec<f64> = recent.iter().map(|r| r.0).collect();
        OscillationStats {
            window: recent.len(),
            loss_min: losses.iter().copied().fold(f64::INFINITY, f64::min),
            loss_max: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            loss_increases: losses.windows(2).filter(|w| w[1] > w[0]).count(),
            mean_step_norm: recent.iter().map(|r| r.1).sum::<f64>() / recent.len() as f64,
            final_alignment: alignment(&grad, &theta),
        }
    });
    Ok(RenormReport {
        outcome,
        steps_taken: steps,
        skip_fired,
        final_loss: loss.value(&theta),
        final_grad_norm: norm(&grad),
        final_theta: theta,
        oscillation,
    })
}

/// Alignment tolerance for the decision-boundary check.
pub const BOUNDARY_ALIGNMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAlignment {
    pub group_id: String,
    pub cos_alignment: f64,
    /// `<grad_P, theta_P> / ||theta_P||^2`.
    pub lambda: f64,
    /// `1 - probe_eta * lambda`, the factor the probe step scales the group by.
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub applicable: bool,
    pub reason: Option<String>,
    pub homogeneous: bool,
    pub groups: Vec<GroupAlignment>,
    pub samples: usize,
    pub match_rate: f64,
}

/// Gradients `grad_P = lambda_P * theta_P`, one `lambda` per group.
pub fn aligned_gradients(network: &Network, lambdas: &[f64]) -> Result<Vec<ParamGroup>> {
    let groups = network.param_groups();
    if groups.len() != lambdas.len() {
        return Err(Error::Argument(format!("{} lambdas for {} groups", lambdas.len(), groups.len())));
    }
    Ok(groups
        .into_iter()
        .zip(lambdas)
        .map(|(g, &l)| {
            let grad = g.theta.iter().map(|t| l * t).collect();
            g.with_grad(grad)
        })
        .collect())
}

/// Decision-boundary check at a point whose loss gradient is computed from
/// `inputs` and `labels`.
pub fn boundary_stationarity_check(
    network: &Network,
    inputs: &Tensor,
    labels: &[usize],
    probe_eta: f64,
) -> Result<BoundaryReport> {
    let (_, grads) = network.loss_and_grad(inputs, labels)?;
    boundary_stationarity_check_with_grads(network, inputs, &grads, probe_eta)
}

/// Takes one full-gradient step `theta - probe_eta * grad` from `network` and
/// reports the fraction of `inputs` whose predicted class is unchanged.
/// The check only applies when every group's gradient is parallel to its
/// parameters (within `BOUNDARY_ALIGNMENT_TOL`) and every implied scale
/// factor stays positive.
pub fn boundary_stationarity_check_with_grads(
    network: &Network,
    inputs: &Tensor,
    grads: &[ParamGroup],
    probe_eta: f64,
) -> Result<BoundaryReport> {
    if !(probe_eta >= 0.0) {
        return Err(Error::Argument(format!("probe_eta must be >= 0, got {probe_eta}")));
    }
    let mut groups = Vec::with_capacity(grads.len());
    let mut reason = None;
    for g in grads {
        let tt = dot(&g.theta, &g.theta);
        let cos = alignment(&g.grad, &g.theta);
        let lambda = if tt > 0.0 { dot(&g.grad, &g.theta) / tt } else { 0.0 };
        let scale_factor = 1.0 - probe_eta * lambda;
        if reason.is_none() && cos < 1.0 - BOUNDARY_ALIGNMENT_TOL {
            reason = Some(format!("group {} alignment {cos} below 1 - {BOUNDARY_ALIGNMENT_TOL}", g.group_id));
        }
        if reason.is_none() && !(scale_factor > 0.0) {
            reason = Some(format!("group {} scale factor {scale_factor} not positive", g.group_id));
        }
        groups.push(GroupAlignment { group_id: g.group_id.clone(), cos_alignment: cos, lambda, scale_factor });
    }
    let homogeneous = network.is_homogeneous();
    if let Some(reason) = reason {
        return Ok(BoundaryReport {
            applicable: false,
            reason: Some(reason),
            homogeneous,
            groups,
            samples: inputs.rows(),
            match_rate: f64::NAN,
        });
    }
    let before = network.logits(inputs)?;
    let mut stepped = network.clone();
    let moved: Vec<ParamGroup> = grads
        .iter()
        .map(|g| {
            let theta = g.theta.iter().zip(&g.grad).map(|(t, d)| t - probe_eta * d).collect();
            ParamGroup { theta, ..g.clone() }
        })
        .collect();
    stepped.load_groups(&moved)?;
    let after = stepped.logits(inputs)?;
    let n = inputs.rows();
    let same = before
        .iter_rows()
        .zip(after.iter_rows())
        .filter(|(a, b)| argmax(a) == argmax(b))
        .count();
    Ok(BoundaryReport {
        applicable: true,
        reason: None,
        homogeneous,
        groups,
        samples: n,
        match_rate: if n == 0 { 1.0 } else { same as f64 / n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::random_inputs;
    use crate::rng::{stream, Stream};

    fn unit_quadratic(center: Vec<f64>) -> AnalyticLoss {
        let p = center.len();
        let mut m = vec![0.0; p * p];
        (0..p).for_each(|i| m[i * p + i] = 1.0);
        AnalyticLoss::shifted_quadratic(center, m).unwrap()
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let mut e = symmetric_eigenvalues(&m, 3);
        e.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_spd_rejected() {
        assert!(AnalyticLoss::shifted_quadratic(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, -1.0]).is_err());
        assert!(AnalyticLoss::shifted_quadratic(vec![0.0, 0.0], vec![1.0, 0.5, 0.0, 1.0]).is_err());
    }

    #[test]
    fn start_at_minimum_takes_no_steps() {
        let loss = unit_quadratic(vec![1.0, -2.0]);
        let (r, _) = run_plain_perp(&loss, &[1.0, -2.0], 0.5, 100).unwrap();
        assert_eq!(r.steps_taken, 0);
        assert!(r.converged);
        assert_eq!(r.final_grad_norm, 0.0);
    }

    #[test]
    fn eta_outside_hypothesis_rejected() {
        let loss = unit_quadratic(vec![1.0, 0.0]);
        assert!(run_plain_perp(&loss, &[0.0, 1.0], 1.0, 10).is_err());
        assert!(run_plain_perp(&loss, &[0.0, 1.0], 0.0, 10).is_err());
        assert!(run_plain_perp(&loss, &[0.0, 0.0], 0.5, 10).is_err());
    }

    #[test]
    fn single_point_trajectory_has_no_violations() {
        let loss = unit_quadratic(vec![1.0]);
        let traj = Trajectory { points: vec![TrajectoryPoint { loss: 0.0, ortho_grad_sq: 0.0 }] };
        let c = check_descent_inequality(&loss, &traj, 0.5, 1.0);
        assert_eq!(c.violations, 0);
        assert!(c.summability_bound_satisfied);
    }

    #[test]
    fn renorm_at_minimum_stabilizes_immediately() {
        let loss = unit_quadratic(vec![0.5, 0.25]);
        let r = run_renorm_perp(&loss, &[0.5, 0.25], 0.1, 1e-30, 1e-12, 100).unwrap();
        assert_eq!(r.outcome, RenormOutcome::Stabilized);
        assert_eq!(r.steps_taken, 0);
        assert!(r.skip_fired);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let loss = AnalyticLoss::random_logistic_2d(40, 0.01, &mut stream(3, Stream::Data)).unwrap();
        let theta = [0.3, -0.7];
        let g = loss.grad(&theta);
        for i in 0..2 {
            let h = 1e-6;
            let mut tp = theta;
            let mut tm = theta;
            tp[i] += h;
            tm[i] -= h;
            let fd = (loss.value(&tp) - loss.value(&tm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_probe_keeps_predictions() {
        let net = Network::mlp(&[3, 8, 3], false, &mut stream(9, Stream::Init)).unwrap();
        let x = random_inputs(30, 3, &mut stream(9, Stream::Data));
        let grads = aligned_gradients(&net, &[0.7, -1.3]).unwrap();
        let r = boundary_stationarity_check_with_grads(&net, &x, &grads, 0.0).unwrap();
        assert!(r.applicable);
        assert_eq!(r.match_rate, 1.0);
    }

    #[test]
    fn misaligned_gradient_is_not_applicable() {
        let net = Network::mlp(&[3, 8, 3], false, &mut stream(9, Stream::Init)).unwrap();
        let x = random_inputs(30, 3, &mut stream(9, Stream::Data));
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let r = boundary_stationarity_check(&net, &x, &labels, 0.1).unwrap();
        assert!(!r.applicable);
        assert!(r.reason.is_some());
    }
}
