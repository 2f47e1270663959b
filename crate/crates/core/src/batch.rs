use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_into, Tensor};

/// Logits, their softmax and the true labels for a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    logits: Tensor,
    probs: Tensor,
    labels: Vec<usize>,
}

impl PredictionBatch {
    /// Builds a batch from an `N x k` logit matrix, computing the softmax rows.
    pub fn from_logits(logits: Tensor, labels: Vec<usize>) -> Result<Self> {
        if logits.shape().len() != 2 {
            return Err(Error::Config(format!(
                "logits must be a matrix, got shape {:?}",
                logits.shape()
            )));
        }
        let (n, k) = (logits.rows(), logits.cols());
        if labels.len() != n {
            return Err(Error::Config(format!("{} labels for {n} logit rows", labels.len())));
        }
        if k == 0 {
            return Err(Error::Config("logits have zero classes".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Argument(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = Tensor::zeros(vec![n, k]);
        for i in 0..n {
            softmax_into(logits.row(i), probs.row_mut(i));
        }
        Ok(Self { logits, probs, labels })
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }

    /// The same batch with every logit divided by `temperature`.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Argument(format!("temperature must be > 0, got {temperature}")));
        }
        Self::from_logits(self.logits.scale(1.0 / temperature), self.labels.clone())
    }

    /// Predicted class per sample: the largest logit, ties to the lower index.
    pub fn argmax(&self) -> Vec<usize> {
        self.logits.iter_rows().map(argmax).collect()
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels() {
        let logits = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(
            PredictionBatch::from_logits(logits, vec![2]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
