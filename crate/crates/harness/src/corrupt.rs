//! Synthetic input corruptions with five severity levels.
//!
//! | operator          | severity parameter                          |
//! |-------------------|---------------------------------------------|
//! | `gaussian_noise`  | sd `0.04 s` of each feature's range         |
//! | `impulse_noise`   | fraction `0.02 s` of entries set to extremes |
//! | `contrast_reduce` | blend weight `0.15 s` toward the batch mean  |
//! | `box_blur`        | window `2 s + 1` along each grid row         |
//!
//! Severity 0 is the identity. Outputs are clipped to the feature range.

use orthograd::rng::Rng;
use orthograd::tensor::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    GaussianNoise,
    ImpulseNoise,
    ContrastReduce,
    BoxBlur,
}

impl Operator {
    pub const ALL: [Operator; 4] =
        [Operator::GaussianNoise, Operator::ImpulseNoise, Operator::ContrastReduce, Operator::BoxBlur];

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::GaussianNoise => "gaussian_noise",
            Operator::ImpulseNoise => "impulse_noise",
            Operator::ContrastReduce => "contrast_reduce",
            Operator::BoxBlur => "box_blur",
        }
    }

    /// Stable index used to derive the operator's random stream.
    pub fn index(self) -> u64 {
        self as u64
    }

    /// Strength at severity `s`: noise sd fraction, impulse fraction, blend
    /// weight, or blur radius.
    pub fn parameter(self, severity: u8) -> f64 {
        let s = severity as f64;
        match self {
            Operator::GaussianNoise => 0.04 * s,
            Operator::ImpulseNoise => 0.02 * s,
            Operator::ContrastReduce => 0.15 * s,
            Operator::BoxBlur => s,
        }
    }
}

impl std::fmt::Display for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Operator {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Operator::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown corruption operator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub operator: Operator,
    pub severity: u8,
}

/// Per-feature bounds the corruptions scale with and clip to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FeatureRange {
    pub fn from_features(x: &Tensor) -> Self {
        let d = x.cols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in x.iter_rows() {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        if x.rows() == 0 {
            lo.fill(0.0);
            hi.fill(0.0);
        }
        Self { lo, hi }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }
}

/// Applies `spec` to every row of `x`. `grid` is the `[height, width]` layout
/// of the feature vector and is required by `box_blur`.
pub fn corrupt(
    x: &Tensor,
    spec: CorruptionSpec,
    range: &FeatureRange,
    grid: Option<[usize; 2]>,
    rng: &mut Rng,
) -> Result<Tensor> {
    if spec.severity > 5 {
        return Err(HarnessError::Config(format!("severity {} outside 0..=5", spec.severity)));
    }
    let d = x.cols();
    if range.lo.len() != d || range.hi.len() != d {
        return Err(HarnessError::Config(format!("feature range has {} entries for {d} features", range.lo.len())));
    }
    if spec.operator == Operator::BoxBlur {
        match grid {
            Some([h, w]) if h * w == d => {}
            Some([h, w]) => {
                return Err(HarnessError::Config(format!("grid {h}x{w} does not match {d} features")));
            }
            None => return Err(HarnessError::Config("box_blur needs grid-structured features".into())),
        }
    }
    if spec.severity == 0 {
        return Ok(x.clone());
    }
    let p = spec.operator.parameter(spec.severity);
    let mut out = x.clone();
    match spec.operator {
        Operator::GaussianNoise => {
            for i in 0..out.rows() {
                for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += p * range.width(j) * z;
                }
            }
        }
        Operator::ImpulseNoise => {
            let total = out.rows() * d;
            let m = (p * total as f64).round() as usize;
            let data = out.data_mut();
            for pos in rand::seq::index::sample(rng, total, m.min(total)) {
                let j = pos % d;
                data[pos] = if rng.random::<bool>() { range.hi[j] } else { range.lo[j] };
            }
        }
        Operator::ContrastReduce => {
            let n = out.rows().max(1) as f64;
            let mut mean = vec![0.0; d];
            for row in x.iter_rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / n;
                }
            }
            for i in 0..out.rows() {
                for (v, m) in out.row_mut(i).iter_mut().zip(&mean) {
                    *v += p * (m - *v);
                }
            }
        }
        Operator::BoxBlur => {
            let [h, w] = grid.expect("checked above");
            let r = p as usize;
            for i in 0..out.rows() {
                let src = x.row(i);
                let dst = out.row_mut(i);
                for row in 0..h {
                    let line = &src[row * w..(row + 1) * w];
                    for col in 0..w {
                        let a = col.saturating_sub(r);
                        let b = (col + r).min(w - 1);
                        dst[row * w + col] = line[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
                    }
                }
            }
        }
    }
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = v.clamp(range.lo[j], range.hi[j]);
        }
    }
    Ok(out)
}

/// Mean absolute change per entry.
pub fn mean_perturbation(before: &Tensor, after: &Tensor) -> f64 {
    let n = before.data().len();
    if n == 0 {
        return 0.0;
    }
    before.data().iter().zip(after.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64
}
