//! Browser demo. Each export takes plain numbers and returns a JSON string
//! that `www/index.html` draws on a canvas.

use orthograd::calibration::{evaluate, fit_temperature, ReliabilityBin};
use orthograd::convergence::AnalyticLoss;
use orthograd::optim::{orthogonalize, OptimConfig, Optimizer, Variant};
use orthograd::rng::{stream, Rng, Stream};
use orthograd::tensor::{dot, Tensor};
use orthograd::{Network, PredictionBatch};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn js_err(e: orthograd::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct Trajectories {
    center: Vec<f64>,
    k: f64,
    eta: f64,
    gd: Vec<[f64; 2]>,
    perp: Vec<[f64; 2]>,
    gd_loss: Vec<f64>,
    perp_loss: Vec<f64>,
    /// Loss on a `grid x grid` lattice over `[-extent, extent]^2`, row-major.
    grid: usize,
    extent: f64,
    surface: Vec<f64>,
}

/// Gradient descent and plain orthogonalized descent on the same random 2-D
/// quadratic, started from the same point. `eta_frac` is the step as a
/// fraction of `1/k`.
#[wasm_bindgen]
pub fn quadratic_trajectories(seed: u32, eta_frac: f64, steps: u32, x0: f64, y0: f64) -> Result<String, JsError> {
    if !(eta_frac > 0.0 && eta_frac < 2.0) {
        return Err(JsError::new("eta_frac must be in (0, 2)"));
    }
    let mut rng = stream(seed as u64, Stream::Probe);
    let loss = AnalyticLoss::random_quadratic(2, (0.2, 5.0), &mut rng).map_err(js_err)?;
    let AnalyticLoss::ShiftedQuadratic { center, .. } = &loss else { unreachable!() };
    let k = loss.lipschitz_k();
    let eta = eta_frac / k;
    let mut gd = vec![[x0, y0]];
    let mut perp = vec![[x0, y0]];
    for _ in 0..steps {
        let t = *gd.last().unwrap();
        let g = loss.grad(&t);
        gd.push([t[0] - eta * g[0], t[1] - eta * g[1]]);
        let t = *perp.last().unwrap();
        let g = orthogonalize(&t, &loss.grad(&t), 0.0).g;
        perp.push([t[0] - eta * g[0], t[1] - eta * g[1]]);
    }
    let extent = 3.0f64.max(x0.abs().max(y0.abs()) * 1.2);
    let grid = 60;
    let mut surface = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        let y = extent - 2.0 * extent * i as f64 / (grid - 1) as f64;
        for j in 0..grid {
            let x = -extent + 2.0 * extent * j as f64 / (grid - 1) as f64;
            surface.push(loss.value(&[x, y]));
        }
    }
    to_js(&Trajectories {
        center: center.clone(),
        k,
        eta,
        gd_loss: gd.iter().map(|t| loss.value(t)).collect(),
        perp_loss: perp.iter().map(|t| loss.value(t)).collect(),
        gd,
        perp,
        grid,
        extent,
        surface,
    })
}

#[derive(Serialize)]
struct Calibration {
    t_star: f64,
    ece_before: f64,
    ece_after: f64,
    nll_before: f64,
    nll_after: f64,
    bins_before: Vec<ReliabilityBin>,
    bins_after: Vec<ReliabilityBin>,
}

/// Draws logits whose softmax is the true label distribution, multiplies them
/// by `inflate` to make the model over- or under-confident, fits a
/// temperature on half of the samples and reports the other half.
#[wasm_bindgen]
pub fn temperature_demo(seed: u32, n: u32, classes: u32, inflate: f64, bins: u32) -> Result<String, JsError> {
    if n < 4 || classes < 2 || !(inflate > 0.0) || bins == 0 {
        return Err(JsError::new("need n >= 4, classes >= 2, inflate > 0, bins >= 1"));
    }
    let mut rng = stream(seed as u64, Stream::Data);
    let (fit, held) = (synthetic(n as usize / 2, classes as usize, inflate, &mut rng)?, synthetic(n as usize / 2, classes as usize, inflate, &mut rng)?);
    let t = fit_temperature(&fit, bins as usize).map_err(js_err)?;
    let before = evaluate(&held, bins as usize).map_err(js_err)?;
    let after = evaluate(&held.with_temperature(t.t_star).map_err(js_err)?, bins as usize).map_err(js_err)?;
    to_js(&Calibration {
        t_star: t.t_star,
        ece_before: before.ece,
        ece_after: after.ece,
        nll_before: before.nll,
        nll_after: after.nll,
        bins_before: before.bins,
        bins_after: after.bins,
    })
}

fn synthetic(n: usize, k: usize, inflate: f64, rng: &mut Rng) -> Result<PredictionBatch, JsError> {
    let normal = Normal::new(0.0, 2.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
        let mut y = k - 1;
        for (j, wj) in w.iter().enumerate() {
            if u < *wj {
                y = j;
                break;
            }
            u -= wj;
        }
        rows.push(z.iter().map(|v| inflate * v).collect::<Vec<_>>());
        labels.push(y);
    }
    let logits = Tensor::from_rows(&rows).map_err(js_err)?;
    PredictionBatch::from_logits(logits, labels).map_err(js_err)
}

#[derive(Serialize)]
struct Regions {
    variant: &'static str,
    points: Vec<[f64; 2]>,
    labels: Vec<usize>,
    train_acc: f64,
    theta_norm: f64,
    mean_confidence: f64,
    /// Probability of class 1 on a `grid x grid` lattice over
    /// `[-extent, extent]^2`, row-major from the top.
    grid: usize,
    extent: f64,
    prob: Vec<f64>,
}

fn two_moons(n: usize, noise: f64, rng: &mut Rng) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let a = rng.random_range(0.0..std::f64::consts::PI);
        let (x0, x1) = if y == 0 { (a.cos(), a.sin()) } else { (1.0 - a.cos(), 0.5 - a.sin()) };
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        // centred on the origin so the lattice is symmetric
        pts.push([x0 + noise * e0 - 0.5, x1 + noise * e1 - 0.25]);
        labels.push(y);
    }
    (pts, labels)
}

/// Trains a small MLP on two moons with the chosen optimizer
/// (`sgd`, `perp_renorm` or `perp_plain`) and returns its decision surface.
#[wasm_bindgen]
pub fn two_moons_regions(seed: u32, variant: &str, epochs: u32, eta: f64) -> Result<String, JsError> {
    let variant: Variant = variant.parse().map_err(js_err)?;
    let mut rng = stream(seed as u64, Stream::Data);
    let (points, labels) = two_moons(400, 0.15, &mut rng);
    let x = Tensor::from_rows(&points).map_err(js_err)?;
    let mut init = stream(seed as u64, Stream::Init);
    let mut net = Network::mlp(&[2, 32, 32, 2], true, &mut init).map_err(js_err)?;
    let mut opt = Optimizer::new(OptimConfig { eta, variant, ..Default::default() }).map_err(js_err)?;
    let mut batches = stream(seed as u64, Stream::Batches);
    let mut order: Vec<usize> = (0..points.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut batches);
        for chunk in order.chunks(32) {
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, mut groups) = net.loss_and_grad(&x.select_rows(chunk), &y).map_err(js_err)?;
            if !loss.is_finite() {
                return Err(JsError::new("training diverged; lower the step size"));
            }
            opt.step(&mut groups).map_err(js_err)?;
            net.load_groups(&groups).map_err(js_err)?;
        }
    }
    let fit = net.forward(&x, &labels).map_err(js_err)?;
    let report = evaluate(&fit, 10).map_err(js_err)?;

    let (grid, extent) = (50usize, 2.0f64);
    let mut lattice = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        let yy = extent - 2.0 * extent * i as f64 / (grid - 1) as f64;
        for j in 0..grid {
            lattice.push([-extent + 2.0 * extent * j as f64 / (grid - 1) as f64, yy]);
        }
    }
    let logits = net.logits(&Tensor::from_rows(&lattice).map_err(js_err)?).map_err(js_err)?;
    let prob = logits.iter_rows().map(|z| 1.0 / (1.0 + (z[0] - z[1]).exp())).collect();
    let groups = net.param_groups();
    let theta_norm = groups.iter().map(|g| dot(&g.theta, &g.theta)).sum::<f64>().sqrt();
    to_js(&Regions {
        variant: variant.as_str(),
        points,
        labels,
        train_acc: report.top1_acc,
        theta_norm,
        mean_confidence: report.mean_max_softmax,
        grid,
        extent,
        prob,
    })
}
