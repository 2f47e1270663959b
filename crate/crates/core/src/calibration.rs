//! Calibration metrics over a [`PredictionBatch`] and temperature scaling.
//!
//! Conventions: losses and entropies are in nats, the Brier score sums over
//! classes (range `[0, 2]`), and logit variance is the population variance
//! across a sample's logits, averaged over samples.

use serde::{Deserialize, Serialize};

use crate::batch::{argmax, PredictionBatch};
use crate::error::{Error, Result};
use crate::tensor::log_sum_exp;

pub const DEFAULT_BINS: usize = 15;

/// One equal-width confidence bin `[lo, hi)`; the top bin also holds 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub samples: usize,
    pub classes: usize,
    pub top1_acc: f64,
    /// Top-5 accuracy, or top-k when there are fewer than five classes.
    pub top5_acc: f64,
    pub nll: f64,
    pub ece: f64,
    pub brier: f64,
    pub mean_entropy: f64,
    pub mean_max_softmax: f64,
    pub mean_max_logit: f64,
    pub mean_logit_variance: f64,
    /// Pearson correlation of max-softmax with correctness; `None` below two samples.
    pub conf_acc_corr: Option<f64>,
    pub bins: Vec<ReliabilityBin>,
}

/// Fraction of samples whose label ranks among the `topn` largest logits.
/// Equal logits rank the lower class index first.
pub fn accuracy(batch: &PredictionBatch, topn: usize) -> Result<f64> {
    let k = batch.num_classes();
    if topn == 0 || topn > k {
        return Err(Error::Argument(format!("topn must be in 1..={k}, got {topn}")));
    }
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let hits = batch
        .logits()
        .iter_rows()
        .zip(batch.labels())
        .filter(|(z, &y)| {
            let above = z
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > z[y] || (v == z[y] && j < y))
                .count();
            above < topn
        })
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

fn bin_index(conf: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut b = ((conf * n).floor().max(0.0) as usize).min(n_bins - 1);
    while b + 1 < n_bins && conf >= (b + 1) as f64 / n {
        b += 1;
    }
    while b > 0 && conf < b as f64 / n {
        b -= 1;
    }
    b
}

fn max_softmax(batch: &PredictionBatch) -> impl Iterator<Item = f64> + '_ {
    batch.probs().iter_rows().map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn correctness(batch: &PredictionBatch) -> impl Iterator<Item = bool> + '_ {
    batch.logits().iter_rows().zip(batch.labels()).map(|(z, &y)| argmax(z) == y)
}

/// Reliability diagram over `n_bins` equal-width max-softmax bins.
pub fn reliability_bins(batch: &PredictionBatch, n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if n_bins == 0 {
        return Err(Error::Argument("n_bins must be >= 1".into()));
    }
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut acc_sum = vec![0.0; n_bins];
    for (conf, correct) in max_softmax(batch).zip(correctness(batch)) {
        let b = bin_index(conf, n_bins);
        count[b] += 1;
        conf_sum[b] += conf;
        acc_sum[b] += if correct { 1.0 } else { 0.0 };
    }
    Ok((0..n_bins)
        .map(|b| {
            let c = count[b];
            let (mean_confidence, mean_accuracy) =
                if c == 0 { (0.0, 0.0) } else { (conf_sum[b] / c as f64, acc_sum[b] / c as f64) };
            ReliabilityBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: c,
                mean_confidence,
                mean_accuracy,
            }
        })
        .collect())
}

/// `sum_b (count_b / N) |acc_b - conf_b|`; empty bins contribute nothing.
pub fn ece_from_bins(bins: &[ReliabilityBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.mean_accuracy - b.mean_confidence).abs())
        .sum()
}

pub fn ece(batch: &PredictionBatch, n_bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(batch, n_bins)?))
}

/// Mean over samples of `sum_c (p_c - [c == label])^2`.
pub fn brier(batch: &PredictionBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .probs()
        .iter_rows()
        .zip(batch.labels())
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(c, &pc)| {
                    let t = if c == y { 1.0 } else { 0.0 };
                    (pc - t) * (pc - t)
                })
                .sum::<f64>()
        })
        .sum();
    total / batch.len() as f64
}

/// Mean cross-entropy of the true labels, in nats.
pub fn nll(batch: &PredictionBatch) -> f64 {
    nll_at_temperature(batch, 1.0)
}

/// Mean NLL of `softmax(logits / t)`.
pub fn nll_at_temperature(batch: &PredictionBatch, t: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / t;
    let mut scaled = vec![0.0; batch.num_classes()];
    let total: f64 = batch
        .logits()
        .iter_rows()
        .zip(batch.labels())
        .map(|(z, &y)| {
            scaled.iter_mut().zip(z).for_each(|(s, &v)| *s = v * inv);
            log_sum_exp(&scaled) - scaled[y]
        })
        .sum();
    total / batch.len() as f64
}

/// Mean Shannon entropy of the predictive distribution, with `0 ln 0 = 0`.
pub fn mean_entropy(batch: &PredictionBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .probs()
        .iter_rows()
        .map(|p| -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
        .sum();
    total / batch.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub mean_max_softmax: f64,
    pub mean_max_logit: f64,
    pub mean_logit_variance: f64,
    pub conf_acc_corr: Option<f64>,
}

pub fn confidence_stats(batch: &PredictionBatch) -> ConfidenceStats {
    let n = batch.len();
    if n == 0 {
        return ConfidenceStats {
            mean_max_softmax: 0.0,
            mean_max_logit: 0.0,
            mean_logit_variance: 0.0,
            conf_acc_corr: None,
        };
    }
    let nf = n as f64;
    let confs: Vec<f64> = max_softmax(batch).collect();
    let correct: Vec<f64> = correctness(batch).map(|c| if c { 1.0 } else { 0.0 }).collect();
    let mean_max_logit = batch
        .logits()
        .iter_rows()
        .map(|z| z.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / nf;
    let mean_logit_variance = batch
        .logits()
        .iter_rows()
        .map(|z| {
            let k = z.len() as f64;
            let m = z.iter().sum::<f64>() / k;
            z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k
        })
        .sum::<f64>()
        / nf;
    let conf_acc_corr = (n >= 2).then(|| pearson(&confs, &correct));
    ConfidenceStats {
        mean_max_softmax: confs.iter().sum::<f64>() / nf,
        mean_max_logit,
        mean_logit_variance,
        conf_acc_corr,
    }
}

/// Pearson correlation; 0 when either side has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Every metric at once.
pub fn evaluate(batch: &PredictionBatch, n_bins: usize) -> Result<CalibrationReport> {
    let bins = reliability_bins(batch, n_bins)?;
    let k = batch.num_classes();
    let conf = confidence_stats(batch);
    Ok(CalibrationReport {
        samples: batch.len(),
        classes: k,
        top1_acc: accuracy(batch, 1)?,
        top5_acc: accuracy(batch, k.min(5))?,
        nll: nll(batch),
        ece: ece_from_bins(&bins),
        brier: brier(batch),
        mean_entropy: mean_entropy(batch),
        mean_max_softmax: conf.mean_max_softmax,
        mean_max_logit: conf.mean_max_logit,
        mean_logit_variance: conf.mean_logit_variance,
        conf_acc_corr: conf.conf_acc_corr,
        bins,
    })
}

/// `bin_lo,bin_hi,count,mean_conf,mean_acc` rows with a header line.
pub fn bins_to_csv(bins: &[ReliabilityBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,mean_conf,mean_acc\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.lo, b.hi, b.count, b.mean_confidence, b.mean_accuracy
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureResult {
    pub t_star: f64,
    /// Every logit row was constant, so no temperature changes anything.
    pub degenerate: bool,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub brier_before: f64,
    pub brier_after: f64,
}

pub const LOG_T_RANGE: (f64, f64) = (-2.995_732_273_553_991, 2.995_732_273_553_991); // ln 0.05, ln 20
pub const LOG_T_TOL: f64 = 1e-6;

/// Fits `T` minimizing mean NLL of `softmax(logits / T)` on `validation` by
/// golden-section search over `log T` in `[ln 0.05, ln 20]`.
pub fn fit_temperature(validation: &PredictionBatch, n_bins: usize) -> Result<TemperatureResult> {
    if validation.is_empty() {
        return Err(Error::Argument("temperature fit needs a non-empty validation batch".into()));
    }
    let degenerate = validation
        .logits()
        .iter_rows()
        .all(|z| z.iter().all(|&v| v == z[0]));
    let t_star = if degenerate { 1.0 } else { golden_section_log_t(validation) };
    temperature_result(validation, t_star, degenerate, n_bins)
}

fn golden_section_log_t(batch: &PredictionBatch) -> f64 {
    let f = |s: f64| nll_at_temperature(batch, s.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LOG_T_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LOG_T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let s = 0.5 * (a + b);
    let t = s.exp();
    // the bracket's midpoint can lose to T = 1 only at rounding level
    if nll_at_temperature(batch, 1.0) < nll_at_temperature(batch, t) {
        1.0
    } else {
        t
    }
}

/// Before/after metrics of applying temperature `t_star` to `batch`.
pub fn temperature_result(
    batch: &PredictionBatch,
    t_star: f64,
    degenerate: bool,
    n_bins: usize,
) -> Result<TemperatureResult> {
    let scaled = batch.with_temperature(t_star)?;
    Ok(TemperatureResult {
        t_star,
        degenerate,
        nll_before: nll(batch),
        nll_after: nll(&scaled),
        ece_before: ece(batch, n_bins)?,
        ece_after: ece(&scaled, n_bins)?,
        brier_before: brier(batch),
        brier_after: brier(&scaled),
    })
}
