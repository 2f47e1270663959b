use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::Result;
use crate::tensor::{dot, Tensor};

/// Relative residual below which a group counts as positively homogeneous.
pub const HOMOGENEITY_TOL: f64 = 1e-8;

/// Least-squares fit of `scaled = alpha * base` for one (group, c) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityEntry {
    pub group_id: String,
    pub c: f64,
    pub alpha: f64,
    /// `||scaled - alpha * base|| / ||scaled||`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    /// Whether the network was built without biases.
    pub flagged_homogeneous: bool,
    pub entries: Vec<HomogeneityEntry>,
    pub max_residual: f64,
    pub passed: bool,
}

impl Network {
    /// Checks positive homogeneity group by group: for each group and each
    /// factor `c`, the logits after scaling must be a positive multiple of
    /// the original logits on every sample.
    pub fn homogeneity_check(&self, samples: &Tensor, c_list: &[f64]) -> Result<HomogeneityReport> {
        let base = self.logits(samples)?;
        let bb = dot(base.data(), base.data());
        let mut entries = Vec::new();
        for group_id in self.group_ids() {
            for &c in c_list {
                let scaled = self.scale_group(&group_id, c)?.logits(samples)?;
                let ss = dot(scaled.data(), scaled.data());
                let alpha = if bb > 0.0 { dot(scaled.data(), base.data()) / bb } else { 0.0 };
                let resid_sq: f64 = scaled
                    .data()
                    .iter()
                    .zip(base.data())
                    .map(|(s, b)| (s - alpha * b).powi(2))
                    .sum();
                let residual = if ss > 0.0 {
                    (resid_sq / ss).sqrt()
                } else if bb > 0.0 {
                    1.0
                } else {
                    0.0
                };
                entries.push(HomogeneityEntry { group_id: group_id.clone(), c, alpha, residual });
            }
        }
        let max_residual = entries.iter().map(|e| e.residual).fold(0.0, f64::max);
        let passed = max_residual < HOMOGENEITY_TOL && entries.iter().all(|e| e.alpha > 0.0);
        Ok(HomogeneityReport {
            flagged_homogeneous: self.is_homogeneous(),
            entries,
            max_residual,
            passed,
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::net::{random_inputs, Network};
    use crate::rng::{stream, Stream};

    #[test]
    fn bias_free_mlp_is_homogeneous_with_alpha_c() {
        let net = Network::mlp(&[3, 16, 16, 4], false, &mut stream(11, Stream::Init)).unwrap();
        let x = random_inputs(50, 3, &mut stream(11, Stream::Data));
        let report = net.homogeneity_check(&x, &[0.5, 3.0]).unwrap();
        assert!(report.flagged_homogeneous);
        assert!(report.passed, "max residual {}", report.max_residual);
        for e in &report.entries {
            assert!((e.alpha - e.c).abs() <= 1e-12 * e.c);
        }
    }

    #[test]
    fn biased_mlp_fails_with_residual() {
        let mut net = Network::mlp(&[3, 16, 4], true, &mut stream(12, Stream::Init)).unwrap();
        // zero-initialised biases would hide the effect
        let mut groups = net.param_groups();
        for g in groups.iter_mut().filter(|g| g.ndim == 1) {
            g.theta.iter_mut().enumerate().for_each(|(i, b)| *b = 0.3 - 0.1 * i as f64);
        }
        net.load_groups(&groups).unwrap();
        let x = random_inputs(50, 3, &mut stream(12, Stream::Data));
        let report = net.homogeneity_check(&x, &[2.0]).unwrap();
        assert!(!report.flagged_homogeneous);
        assert!(!report.passed);
        assert!(report.max_residual > 1e-3);
    }

    #[test]
    fn unit_scale_passes_with_alpha_one() {
        let net = Network::mlp(&[2, 6, 3], true, &mut stream(13, Stream::Init)).unwrap();
        let x = random_inputs(10, 2, &mut stream(13, Stream::Data));
        let report = net.homogeneity_check(&x, &[1.0]).unwrap();
        assert!(report.passed);
        assert!(report.entries.iter().all(|e| e.alpha == 1.0 && e.residual == 0.0));
    }
}
