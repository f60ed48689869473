//! Body/head partitioned multilayer perceptron.
//!
//! Layers are numbered `1..=L` in the public slicing API; layer `L` is the
//! head and `1..L-1` the body (feature extractor). A single-layer network has
//! an empty body.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!(
                "model dimensions must be positive: input {} hidden {:?} output {}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out, activation)` for each layer.
    fn layer_dims(&self) -> Vec<(usize, usize, Activation)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        let last = widths.len() - 2;
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    self.activation
                };
                (w[0], w[1], act)
            })
            .collect()
    }
}

/// One dense layer: `act(x · weight + bias)` with `weight` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn uniform_init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s).expect("finite init bound");
        Layer {
            weight: Tensor::from_fn(&[fan_in, fan_out], |_| dist.sample(rng)),
            bias: Tensor::zeros(&[fan_out]),
            activation,
        }
    }

    fn zeros_like(&self) -> Self {
        Layer {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
            activation: self.activation,
        }
    }
}

/// Classification labels or regression targets for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Classes(&'a [usize]),
    Values(&'a Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    layers: Vec<Layer>,
}

impl LayeredParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for l in &layers {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.fan_out()] {
                return Err(Error::ShapeMismatch {
                    op: "layer",
                    left: l.weight.shape().to_vec(),
                    right: l.bias.shape().to_vec(),
                });
            }
        }
        for w in layers.windows(2) {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::ShapeMismatch {
                    op: "layer chain",
                    left: w[0].weight.shape().to_vec(),
                    right: w[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// A one-parameter "network" whose only meaningful value is the single
    /// weight; used for the 1-D toy landscapes.
    pub fn scalar(x: f64) -> Self {
        Self {
            layers: vec![Layer {
                weight: Tensor::filled(&[1, 1], x),
                bias: Tensor::zeros(&[1]),
                activation: Activation::Identity,
            }],
        }
    }

    /// The first weight; the toy parameter for [`LayeredParams::scalar`].
    pub fn first_value(&self) -> f64 {
        self.layers[0].weight.data()[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.head().fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Layers `i..=j`, 1-indexed and inclusive.
    pub fn slice(&self, i: usize, j: usize) -> &[Layer] {
        assert!(i >= 1 && i <= j + 1 && j <= self.layers.len(), "bad layer slice {i}:{j}");
        &self.layers[i - 1..j]
    }

    pub fn body(&self) -> &[Layer] {
        self.slice(1, self.layers.len() - 1)
    }

    pub fn head(&self) -> &Layer {
        self.layers.last().expect("non-empty")
    }

    pub fn from_body_and_head(body: &[Layer], head: Layer) -> Result<Self> {
        let mut layers = body.to_vec();
        layers.push(head);
        Self::new(layers)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape()
            })
    }

    fn check_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: self.shape_summary(),
                right: other.shape_summary(),
            })
        }
    }

    /// Per-layer parameter counts, for error messages.
    fn shape_summary(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::num_params).collect()
    }

    /// All floats, layer by layer, weight before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Same structure as `self` with values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                op: "with_flat",
                left: vec![self.num_params()],
                right: vec![flat.len()],
            });
        }
        let mut out = self.clone();
        let mut off = 0;
        for l in &mut out.layers {
            for t in [&mut l.weight, &mut l.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(out)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()))
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data().iter()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &Self) -> Result<()> {
        self.check_shape(other, "add_scaled")?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other, "sub")?;
        let mut out = self.clone();
        for (a, b) in out.values_mut().zip(other.values()) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values_mut() {
            *v *= s;
        }
    }

    /// Euclidean norm over every float.
    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_shape(other, "max_abs_diff")?;
        Ok(self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Element-wise mean of equally shaped parameter sets.
    pub fn mean_of(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("mean of zero parameter sets"))?;
        let mut acc = first.zeros_like();
        for it in items {
            acc.add_scaled(1.0, it)?;
        }
        acc.scale(1.0 / items.len() as f64);
        Ok(acc)
    }

    /// Records the forward pass into `g`, returning the output node and the
    /// `(weight, bias)` leaf of every layer.
    pub fn forward_graph(&self, g: &mut Graph, input: Var) -> Result<(Var, Vec<(Var, Var)>)> {
        let width = g.value(input).cols();
        if g.value(input).shape().len() != 2 || width != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: g.value(input).shape().to_vec(),
                right: vec![self.input_dim()],
            });
        }
        let mut h = input;
        let mut leaves = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = g.leaf(l.weight.clone());
            let b = g.leaf(l.bias.clone());
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = match l.activation {
                Activation::Identity => z,
                Activation::Relu => g.relu(z),
                Activation::Tanh => g.tanh(z),
            };
            leaves.push((w, b));
        }
        Ok((h, leaves))
    }

    /// Logits (or regression outputs), one row per input row.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let (out, _) = self.forward_graph(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    /// Batch loss (cross-entropy for classes, mean squared error for values)
    /// and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &Tensor, target: Target<'_>) -> Result<(f64, LayeredParams)> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let (out, leaves) = self.forward_graph(&mut g, x)?;
        let loss = match target {
            Target::Classes(labels) => g.softmax_cross_entropy(out, labels)?,
            Target::Values(t) => {
                let t = g.leaf(t.clone());
                g.mse_loss(out, t)?
            }
        };
        g.backward(loss)?;
        let mut grads = self.zeros_like();
        for (layer, (w, b)) in grads.layers.iter_mut().zip(leaves) {
            if let Some(gw) = g.grad(w) {
                layer.weight = gw.clone();
            }
            if let Some(gb) = g.grad(b) {
                layer.bias = gb.clone();
            }
        }
        Ok((g.value(loss).item(), grads))
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn accuracy(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(batch)?;
        let hits = logits
            .argmax_rows()
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Loss and accuracy without gradients.
    pub fn evaluate(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let (out, _) = self.forward_graph(&mut g, x)?;
        let hits = g
            .value(out)
            .argmax_rows()
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let loss = g.softmax_cross_entropy(out, labels)?;
        Ok((g.value(loss).item(), hits as f64 / labels.len() as f64))
    }
}

/// Fan-scaled uniform weights, zero biases.
pub fn init_params(config: &ModelConfig) -> Result<LayeredParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = config
        .layer_dims()
        .into_iter()
        .map(|(i, o, act)| Layer::uniform_init(i, o, act, &mut rng))
        .collect();
    LayeredParams::new(layers)
}

/// Keeps the body, draws a fresh head with `new_output_dim` outputs.
pub fn replace_head(params: &LayeredParams, new_output_dim: usize, seed: u64) -> Result<LayeredParams> {
    if new_output_dim < 2 {
        return Err(Error::invalid(format!(
            "a classification head needs at least 2 outputs, got {new_output_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = params.head();
    let fresh = Layer::uniform_init(head.fan_in(), new_output_dim, head.activation, &mut rng);
    LayeredParams::from_body_and_head(params.body(), fresh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    BodyFrozen,
    AllTrainable,
}

/// Per-layer trainable flags.
pub fn freeze_mask(params: &LayeredParams, mode: FreezeMode) -> Vec<bool> {
    let n = params.num_layers();
    match mode {
        FreezeMode::AllTrainable => vec![true; n],
        FreezeMode::BodyFrozen => (0..n).map(|i| i == n - 1).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::new(4, &[8, 8], 3).with_seed(7);
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let other = init_params(&cfg.clone().with_seed(8)).unwrap();
        assert_ne!(init_params(&cfg).unwrap(), other);
    }

    #[test]
    fn biases_start_at_zero_and_weights_are_bounded() {
        let p = init_params(&ModelConfig::new(2, &[8], 5)).unwrap();
        for l in p.layers() {
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
            let s = (6.0 / (l.fan_in() + l.fan_out()) as f64).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= s));
        }
    }

    #[test]
    fn parameter_count() {
        let p = init_params(&ModelConfig::new(2, &[8], 5)).unwrap();
        assert_eq!(p.layers()[0].weight.shape(), &[2, 8]);
        assert_eq!(p.layers()[1].weight.shape(), &[8, 5]);
        assert_eq!(p.num_params(), 69);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = init_params(&ModelConfig::new(3, &[4], 2)).unwrap().zeros_like();
        let out = p.forward(&Tensor::filled(&[5, 3], 1.5)).unwrap();
        assert_eq!(out.shape(), &[5, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_single_hidden_unit() {
        // x -> tanh(0.5 x + 0.1) -> -2 h + 0.3
        let layers = vec![
            Layer {
                weight: Tensor::filled(&[1, 1], 0.5),
                bias: Tensor::filled(&[1], 0.1),
                activation: Activation::Tanh,
            },
            Layer {
                weight: Tensor::filled(&[1, 1], -2.0),
                bias: Tensor::filled(&[1], 0.3),
                activation: Activation::Identity,
            },
        ];
        let p = LayeredParams::new(layers).unwrap();
        let out = p.forward(&Tensor::filled(&[1, 1], 1.2)).unwrap();
        let expected = -2.0 * (0.5f64 * 1.2 + 0.1).tanh() + 0.3;
        assert!((out.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_params(&ModelConfig::new(3, &[4], 2)).unwrap();
        assert!(p.forward(&Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn batch_row_matches_single_row() {
        let p = init_params(&ModelConfig::new(3, &[6], 4).with_seed(3)).unwrap();
        let batch = Tensor::from_fn(&[7, 3], |i| (i as f64 * 0.37).sin());
        let all = p.forward(&batch).unwrap();
        let one = p.forward(&batch.select_rows(&[4])).unwrap();
        assert_eq!(one.row(0), all.row(4));
    }

    #[test]
    fn replace_head_keeps_body() {
        let p = init_params(&ModelConfig::new(3, &[6, 5], 4).with_seed(3)).unwrap();
        let q = replace_head(&p, 4, 99).unwrap();
        assert_eq!(p.body(), q.body());
        let r = replace_head(&p, 5, 1).unwrap();
        assert_eq!(r.head().weight.shape(), &[5, 5]);
        assert_eq!(r.output_dim(), 5);
        assert!(replace_head(&p, 1, 1).is_err());
    }

    #[test]
    fn freeze_masks() {
        let p = init_params(&ModelConfig::new(3, &[6, 5], 4)).unwrap();
        assert_eq!(freeze_mask(&p, FreezeMode::BodyFrozen), vec![false, false, true]);
        assert_eq!(freeze_mask(&p, FreezeMode::AllTrainable), vec![true; 3]);
        let single = init_params(&ModelConfig::new(3, &[], 4)).unwrap();
        assert_eq!(freeze_mask(&single, FreezeMode::BodyFrozen), vec![true]);
        assert!(single.body().is_empty());
    }

    #[test]
    fn body_and_head_reconstruct() {
        let p = init_params(&ModelConfig::new(3, &[6, 5], 4)).unwrap();
        let q = LayeredParams::from_body_and_head(p.slice(1, 2), p.slice(3, 3)[0].clone()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(&ModelConfig::new(3, &[6], 4).with_seed(11)).unwrap();
        assert_eq!(p.with_flat(&p.flatten()).unwrap(), p);
    }
}
