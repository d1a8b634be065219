//! Dense feedforward classifier with explicit forward and reverse passes.
//!
//! Batches are stored one sample per row. Weight matrix `l` has shape
//! `(layer_sizes[l], layer_sizes[l + 1])`, so a layer computes
//! `post = act(prev · W + b)`. The output layer is linear and produces logits.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{Block, Container};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation value. ReLU uses 0 at the kink.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation '{other}' (expected relu, tanh or identity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    pub(crate) weights: Vec<DMatrix<f64>>,
    pub(crate) biases: Vec<DVector<f64>>,
    activation: Activation,
    seed: u64,
}

/// Per-layer record of one forward pass.
///
/// `post[0]` is the input batch, `post[1..L]` are hidden activations and
/// `post[L]` holds the logits. `pre[l]` is the affine output of transition `l`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &DMatrix<f64> {
        &self.post[0]
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        self.post.last().expect("trace has at least input and logits")
    }

    /// Features of the last hidden layer (the input itself for a net without hidden layers).
    pub fn penultimate(&self) -> &DMatrix<f64> {
        &self.post[self.post.len() - 2]
    }

    pub fn penultimate_index(&self) -> usize {
        self.post.len() - 2
    }

    /// Activation at index `l` (0 = input, last = logits).
    pub fn layer(&self, l: usize) -> Option<&DMatrix<f64>> {
        self.post.get(l)
    }

    pub fn num_layers(&self) -> usize {
        self.post.len()
    }

    pub fn batch_size(&self) -> usize {
        self.post[0].nrows()
    }

    /// Indices of hidden layers (excludes input and logits).
    pub fn hidden_indices(&self) -> std::ops::Range<usize> {
        1..self.post.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input: Option<DMatrix<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientSet {
            weights: net
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            input: None,
        }
    }
}

/// Builds a ReLU net with fan-in scaled uniform weights and zero biases.
pub fn init_net(layer_sizes: &[usize], seed: u64) -> Result<DenseNet> {
    DenseNet::new(layer_sizes, Activation::Relu, seed)
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidConfig(
            "layer sizes need at least an input and an output dimension".into(),
        ));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!("layer {pos} has size 0")));
    }
    let penultimate = layer_sizes[layer_sizes.len() - 2];
    if penultimate < 2 {
        return Err(Error::InvalidConfig(format!(
            "penultimate dimension must be at least 2, got {penultimate}"
        )));
    }
    Ok(())
}

impl DenseNet {
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = match activation {
                Activation::Relu => 6.0,
                _ => 3.0,
            };
            let limit = (scale / fan_in as f64).sqrt();
            let w = DMatrix::from_row_iterator(
                fan_in,
                fan_out,
                (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)),
            );
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            seed,
        })
    }

    /// Assembles a net from explicit parameters.
    pub fn from_parts(
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != *layer_sizes.last().unwrap() {
                return Err(Error::Shape(format!(
                    "weight {l} has {} rows, expected {}",
                    w.nrows(),
                    layer_sizes.last().unwrap()
                )));
            }
            if b.len() != w.ncols() {
                return Err(Error::Shape(format!(
                    "bias {l} has length {}, expected {}",
                    b.len(),
                    w.ncols()
                )));
            }
            layer_sizes.push(w.ncols());
        }
        validate_sizes(&layer_sizes)?;
        Ok(DenseNet {
            layer_sizes,
            weights,
            biases,
            activation,
            seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn penultimate_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, batch: &DMatrix<f64>) -> Result<ForwardTrace> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, net expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let transitions = self.weights.len();
        let mut pre = Vec::with_capacity(transitions);
        let mut post = Vec::with_capacity(transitions + 1);
        post.push(batch.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z: DMatrix<f64> = &post[l] * w;
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            let a = if l + 1 == transitions {
                z.clone()
            } else {
                z.map(|v| self.activation.apply(v))
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace { pre, post })
    }

    /// Convenience wrapper returning only the logits.
    pub fn logits(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let trace = self.forward(batch)?;
        Ok(trace.post.into_iter().next_back().unwrap())
    }

    /// Reverse pass for a scalar whose partials with respect to the logits
    /// (and optionally the penultimate features) are supplied.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: &DMatrix<f64>,
        d_penultimate: Option<&DMatrix<f64>>,
        want_input_grad: bool,
    ) -> Result<GradientSet> {
        let logits = trace.logits();
        if d_logits.shape() != logits.shape() {
            return Err(Error::Shape(format!(
                "d_logits is {:?}, logits are {:?}",
                d_logits.shape(),
                logits.shape()
            )));
        }
        if trace.post.len() != self.weights.len() + 1 {
            return Err(Error::Shape("trace does not belong to this net".into()));
        }
        if let Some(dp) = d_penultimate {
            if dp.shape() != trace.penultimate().shape() {
                return Err(Error::Shape(format!(
                    "d_penultimate is {:?}, penultimate is {:?}",
                    dp.shape(),
                    trace.penultimate().shape()
                )));
            }
        }

        let transitions = self.weights.len();
        let mut grads = GradientSet::zeros_like(self);
        let mut delta = d_logits.clone();
        for t in (0..transitions).rev() {
            let a_prev = &trace.post[t];
            grads.weights[t] = a_prev.transpose() * &delta;
            grads.biases[t] = delta.row_sum().transpose();
            if t == 0 && !want_input_grad {
                break;
            }
            let mut d_prev = &delta * self.weights[t].transpose();
            if t + 1 == transitions {
                if let Some(dp) = d_penultimate {
                    d_prev += dp;
                }
            }
            if t == 0 {
                grads.input = Some(d_prev);
                break;
            }
            let act = self.activation;
            d_prev.zip_apply(&trace.pre[t - 1], |d, z| *d *= act.derivative(z));
            delta = d_prev;
        }
        Ok(grads)
    }

    pub fn predict(&self, batch: &DMatrix<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits.row_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    /// Fraction of rows whose argmax logit matches the label.
    pub fn accuracy(&self, batch: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        if labels.len() != batch.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.nrows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Empty("accuracy batch"));
        }
        let pred = self.predict(batch)?;
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / labels.len() as f64)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("densenet");
        c.set_attr("activation", self.activation.name());
        c.set_attr("seed", self.seed.to_string());
        c.set_attr(
            "layers",
            self.layer_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            c.push_block(Block::from_matrix(format!("W{l}"), w));
            c.push_block(Block::from_vector(format!("b{l}"), b));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("densenet")?;
        let activation: Activation = c.attr("activation")?.parse()?;
        let seed: u64 = c.parse_attr("seed")?;
        let sizes: Vec<usize> = c
            .attr("layers")?
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| c.format_error(format!("bad layer size '{s}'")))
            })
            .collect::<Result<_>>()?;
        validate_sizes(&sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            weights.push(c.block(&format!("W{l}"))?.to_matrix());
            biases.push(c.block(&format!("b{l}"))?.to_vector()?);
        }
        let net = DenseNet::from_parts(weights, biases, activation, seed)?;
        if net.layer_sizes != sizes {
            return Err(c.format_error("layer header disagrees with parameter blocks".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DenseNet::from_container(&Container::read(path)?)
    }
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
