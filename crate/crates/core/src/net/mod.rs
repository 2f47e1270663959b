//! Feed-forward ReLU networks with exact reverse-mode gradients.
//!
//! A [`Network`] is a stack of affine and ReLU layers. Parameters are exposed
//! as [`ParamGroup`]s, one per weight matrix and one per bias vector, which is
//! the partition the optimizer orthogonalizes over. Networks built without
//! biases are positively homogeneous in every weight group: scaling one weight
//! matrix by `c > 0` scales every logit by `c`.

mod homogeneity;
mod weights;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use homogeneity::{HomogeneityEntry, HomogeneityReport};

use crate::batch::PredictionBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{log_sum_exp, softmax_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Relu,
}

/// Shape description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn linear(in_dim: usize, out_dim: usize, has_bias: bool) -> Self {
        Self { kind: LayerKind::Linear, in_dim, out_dim, has_bias }
    }

    pub fn relu(dim: usize) -> Self {
        Self { kind: LayerKind::Relu, in_dim: dim, out_dim: dim, has_bias: false }
    }
}

/// Dense affine map `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Relu,
}

/// One contiguous block of trainable parameters and its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub group_id: String,
    /// Rank of the underlying tensor: 2 for weight matrices, 1 for biases.
    pub ndim: usize,
    pub theta: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamGroup {
    pub fn new(group_id: impl Into<String>, ndim: usize, theta: Vec<f64>) -> Self {
        let grad = vec![0.0; theta.len()];
        Self { group_id: group_id.into(), ndim, theta, grad }
    }

    pub fn with_grad(mut self, grad: Vec<f64>) -> Self {
        assert_eq!(grad.len(), self.theta.len(), "grad length must match theta");
        self.grad = grad;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

fn weight_id(j: usize) -> String {
    format!("linear{j}.weight")
}

fn bias_id(j: usize) -> String {
    format!("linear{j}.bias")
}

impl Network {
    /// Builds a network from layer specs, He-initialising weights from `rng`.
    /// Biases start at zero.
    pub fn from_specs(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|s| match s.kind {
                LayerKind::Relu => Layer::Relu,
                LayerKind::Linear => {
                    let std = (2.0 / s.in_dim as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let weight = (0..s.in_dim * s.out_dim).map(|_| normal.sample(rng)).collect();
                    let bias = s.has_bias.then(|| vec![0.0; s.out_dim]);
                    Layer::Linear(Linear { in_dim: s.in_dim, out_dim: s.out_dim, weight, bias })
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Multi-layer perceptron `dims[0] -> dims[1] -> ... -> dims[last]` with a
    /// ReLU after every hidden layer.
    pub fn mlp(dims: &[usize], has_bias: bool, rng: &mut Rng) -> Result<Self> {
        Self::from_specs(&mlp_specs(dims, has_bias)?, rng)
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().scan(0usize, |dim, l| {
            Some(match l {
                Layer::Linear(lin) => {
                    *dim = lin.out_dim;
                    LayerSpec::linear(lin.in_dim, lin.out_dim, lin.bias.is_some())
                }
                Layer::Relu => LayerSpec::relu(*dim),
            })
        }).collect();
        validate_specs(&specs)?;
        for l in &layers {
            if let Layer::Linear(lin) = l {
                if lin.weight.len() != lin.in_dim * lin.out_dim
                    || lin.bias.as_ref().is_some_and(|b| b.len() != lin.out_dim)
                {
                    return Err(Error::Config("linear layer parameter length mismatch".into()));
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut dim = self.input_dim();
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear(lin) => {
                    dim = lin.out_dim;
                    LayerSpec::linear(lin.in_dim, lin.out_dim, lin.bias.is_some())
                }
                Layer::Relu => LayerSpec::relu(dim),
            })
            .collect()
    }

    fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            Layer::Relu => None,
        })
    }

    fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            Layer::Relu => None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.linears().next().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.linears().last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// True when no linear layer carries a bias.
    pub fn is_homogeneous(&self) -> bool {
        self.linears().all(|l| l.bias.is_none())
    }

    pub fn num_params(&self) -> usize {
        self.linears()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// Current parameters as groups with zeroed gradients.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        for (j, lin) in self.linears().enumerate() {
            groups.push(ParamGroup::new(weight_id(j), 2, lin.weight.clone()));
            if let Some(b) = &lin.bias {
                groups.push(ParamGroup::new(bias_id(j), 1, b.clone()));
            }
        }
        groups
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.param_groups().into_iter().map(|g| g.group_id).collect()
    }

    /// Writes `theta` of each group back into the network.
    pub fn load_groups(&mut self, groups: &[ParamGroup]) -> Result<()> {
        for g in groups {
            let slot = self.group_slot_mut(&g.group_id)?;
            if slot.len() != g.theta.len() {
                return Err(Error::Config(format!(
                    "group {} has {} parameters, expected {}",
                    g.group_id,
                    g.theta.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&g.theta);
        }
        Ok(())
    }

    fn group_slot_mut(&mut self, group_id: &str) -> Result<&mut Vec<f64>> {
        for (j, lin) in self.linears_mut().enumerate() {
            if group_id == weight_id(j) {
                return Ok(&mut lin.weight);
            }
            if group_id == bias_id(j) {
                if let Some(b) = lin.bias.as_mut() {
                    return Ok(b);
                }
            }
        }
        Err(Error::Argument(format!("unknown parameter group {group_id}")))
    }

    /// Euclidean norm of all parameters taken together.
    pub fn global_norm(&self) -> f64 {
        self.linears()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter().flatten()))
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Copy of the network with group `group_id` multiplied by `c`.
    pub fn scale_group(&self, group_id: &str, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Argument(format!("scale factor must be > 0, got {c}")));
        }
        let mut out = self.clone();
        for x in out.group_slot_mut(group_id)?.iter_mut() {
            *x *= c;
        }
        Ok(out)
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "batch shape {:?} does not match network input dimension {}",
                batch.shape(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for every row of `batch`.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Linear(lin) => lin.forward(&x),
                Layer::Relu => relu(&x),
            };
        }
        Ok(x)
    }

    /// Forward pass producing logits and softmax probabilities.
    pub fn forward(&self, batch: &Tensor, labels: &[usize]) -> Result<PredictionBatch> {
        PredictionBatch::from_logits(self.logits(batch)?, labels.to_vec())
    }

    /// Mean cross-entropy loss in nats and its gradient for every group.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<ParamGroup>)> {
        self.check_input(batch)?;
        let n = batch.rows();
        if n == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        if labels.len() != n {
            return Err(Error::Config(format!("{} labels for {n} samples", labels.len())));
        }
        let k = self.output_dim();
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Argument(format!("label {bad} out of range for {k} classes")));
        }

        // activations[i] is the input to layer i
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let y = match layer {
                Layer::Linear(lin) => lin.forward(x),
                Layer::Relu => relu(x),
            };
            activations.push(y);
        }
        let logits = activations.last().expect("non-empty");

        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut delta = Tensor::zeros(vec![n, k]);
        for i in 0..n {
            let z = logits.row(i);
            loss += log_sum_exp(z) - z[labels[i]];
            let d = delta.row_mut(i);
            softmax_into(z, d);
            d[labels[i]] -= 1.0;
            for v in d.iter_mut() {
                *v *= inv_n;
            }
        }
        loss *= inv_n;

        let mut grads: Vec<ParamGroup> = Vec::new();
        let n_linear = self.linears().count();
        let mut j = n_linear;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &activations[idx];
            match layer {
                Layer::Linear(lin) => {
                    j -= 1;
                    let (gw, gb) = lin.param_grads(input, &delta);
                    if let (Some(b), Some(gb)) = (&lin.bias, gb) {
                        grads.push(ParamGroup::new(bias_id(j), 1, b.clone()).with_grad(gb));
                    }
                    grads.push(ParamGroup::new(weight_id(j), 2, lin.weight.clone()).with_grad(gw));
                    if idx > 0 {
                        delta = lin.backward_input(&delta);
                    }
                }
                Layer::Relu => {
                    for (d, &x) in delta.data_mut().iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(batch)?;
        if logits.rows() == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let total: f64 = logits
            .iter_rows()
            .zip(labels)
            .map(|(z, &y)| log_sum_exp(z) - z[y])
            .sum();
        Ok(total / logits.rows() as f64)
    }
}

impl Linear {
    fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.rows();
        let mut out = Tensor::zeros(vec![n, self.out_dim]);
        for i in 0..n {
            let xi = x.row(i);
            let yi = out.row_mut(i);
            for (o, y) in yi.iter_mut().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum();
                if let Some(b) = &self.bias {
                    acc += b[o];
                }
                *y = acc;
            }
        }
        out
    }

    fn param_grads(&self, input: &Tensor, delta: &Tensor) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = self.bias.as_ref().map(|_| vec![0.0; self.out_dim]);
        for i in 0..input.rows() {
            let xi = input.row(i);
            let di = delta.row(i);
            for (o, &d) in di.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for (g, &x) in row.iter_mut().zip(xi) {
                    *g += d * x;
                }
            }
            if let Some(gb) = gb.as_mut() {
                for (g, &d) in gb.iter_mut().zip(di) {
                    *g += d;
                }
            }
        }
        (gw, gb)
    }

    fn backward_input(&self, delta: &Tensor) -> Tensor {
        let n = delta.rows();
        let mut out = Tensor::zeros(vec![n, self.in_dim]);
        for i in 0..n {
            let di = delta.row(i);
            let oi = out.row_mut(i);
            for (o, &d) in di.iter().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (v, &wv) in oi.iter_mut().zip(w) {
                    *v += d * wv;
                }
            }
        }
        out
    }
}

fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Layer specs for an MLP over `dims`, ReLU between consecutive linear maps.
pub fn mlp_specs(dims: &[usize], has_bias: bool) -> Result<Vec<LayerSpec>> {
    if dims.len() < 2 {
        return Err(Error::Config("an MLP needs at least input and output dimensions".into()));
    }
    let mut specs = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        if i > 0 {
            specs.push(LayerSpec::relu(w[0]));
        }
        specs.push(LayerSpec::linear(w[0], w[1], has_bias));
    }
    Ok(specs)
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if !specs.iter().any(|s| s.kind == LayerKind::Linear) {
        return Err(Error::Config("network needs at least one linear layer".into()));
    }
    let mut dim: Option<usize> = None;
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if s.kind == LayerKind::Relu && s.in_dim != s.out_dim {
            return Err(Error::Config(format!("relu layer {i} changes dimension")));
        }
        if let Some(d) = dim {
            if d != s.in_dim {
                return Err(Error::Config(format!(
                    "layer {i} expects {} inputs but previous layer emits {d}",
                    s.in_dim
                )));
            }
        } else if s.kind == LayerKind::Relu {
            return Err(Error::Config("network must start with a linear layer".into()));
        }
        dim = Some(s.out_dim);
    }
    Ok(())
}

/// Draws `n` standard-normal rows of width `dim`.
pub fn random_inputs(n: usize, dim: usize, rng: &mut Rng) -> Tensor {
    let data = (0..n * dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Tensor::new(vec![n, dim], data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn identity_net() -> Network {
        Network::from_layers(vec![Layer::Linear(Linear {
            in_dim: 2,
            out_dim: 2,
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: None,
        })])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_inputs_through() {
        let x = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(identity_net().logits(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let mut net = Network::mlp(&[3, 4, 5], true, &mut stream(1, Stream::Init)).unwrap();
        let zeroed: Vec<ParamGroup> = net
            .param_groups()
            .into_iter()
            .map(|mut g| {
                g.theta.iter_mut().for_each(|v| *v = 0.0);
                g
            })
            .collect();
        net.load_groups(&zeroed).unwrap();
        let x = random_inputs(4, 3, &mut stream(2, Stream::Data));
        let batch = net.forward(&x, &[0, 1, 2, 3]).unwrap();
        assert!(batch.logits().data().iter().all(|&z| z == 0.0));
        assert!(batch.probs().data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let net = Network::from_layers(vec![Layer::Linear(Linear {
            in_dim: 1,
            out_dim: 2,
            weight: vec![0.0, 0.0],
            bias: None,
        })])
        .unwrap();
        let x = Tensor::from_rows(&[[1.0]]).unwrap();
        let (loss, _) = net.loss_and_grad(&x, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logits_have_vanishing_loss() {
        let net = Network::from_layers(vec![Layer::Linear(Linear {
            in_dim: 2,
            out_dim: 2,
            weight: vec![100.0, 0.0, 0.0, 100.0],
            bias: None,
        })])
        .unwrap();
        let x = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (loss, _) = net.loss_and_grad(&x, &[0, 1]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn empty_batch_is_an_argument_error() {
        let x = Tensor::zeros(vec![0, 2]);
        assert!(matches!(identity_net().loss_and_grad(&x, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let x = Tensor::zeros(vec![1, 3]);
        assert!(matches!(identity_net().logits(&x), Err(Error::Config(_))));
    }

    #[test]
    fn incompatible_specs_rejected() {
        let specs = [LayerSpec::linear(2, 3, false), LayerSpec::linear(4, 2, false)];
        assert!(Network::from_specs(&specs, &mut stream(0, Stream::Init)).is_err());
    }

    #[test]
    fn scale_by_one_is_bitwise_identity() {
        let net = Network::mlp(&[2, 8, 3], true, &mut stream(3, Stream::Init)).unwrap();
        for id in net.group_ids() {
            assert_eq!(net.scale_group(&id, 1.0).unwrap(), net);
        }
    }

    #[test]
    fn nonpositive_scale_rejected() {
        let net = identity_net();
        assert!(matches!(net.scale_group("linear0.weight", 0.0), Err(Error::Argument(_))));
        assert!(matches!(net.scale_group("linear0.weight", -1.0), Err(Error::Argument(_))));
        assert!(net.scale_group("linear9.weight", 2.0).is_err());
    }

    #[test]
    fn groups_partition_parameters() {
        let net = Network::mlp(&[2, 5, 4, 3], true, &mut stream(4, Stream::Init)).unwrap();
        let groups = net.param_groups();
        assert_eq!(groups.len(), 6);
        assert_eq!(groups.iter().map(|g| g.theta.len()).sum::<usize>(), net.num_params());
        let (_, grads) = net
            .loss_and_grad(&random_inputs(3, 2, &mut stream(0, Stream::Data)), &[0, 1, 2])
            .unwrap();
        let ids: Vec<_> = grads.iter().map(|g| g.group_id.clone()).collect();
        assert_eq!(ids, net.group_ids());
    }
}
