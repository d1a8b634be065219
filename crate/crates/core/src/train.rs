//! Mini-batch training with Adam over the composite objective.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::losses::{total_loss, LossConfig};
use crate::net::DenseNet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to weight matrices only.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Mean loss components over the mini-batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub dist: f64,
    pub variance: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: DenseNet,
    pub log: TrainLog,
}

struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &DenseNet) -> Self {
        let zw: Vec<_> = net
            .weights
            .iter()
            .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
            .collect();
        let zb: Vec<_> = net.biases.iter().map(|b| DVector::zeros(b.len())).collect();
        Adam {
            m_w: zw.clone(),
            v_w: zw,
            m_b: zb.clone(),
            v_b: zb,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut DenseNet, gw: &[DMatrix<f64>], gb: &[DVector<f64>], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        };
        for l in 0..net.weights.len() {
            let w = net.weights[l].as_mut_slice();
            if cfg.weight_decay > 0.0 {
                let shrink = 1.0 - lr * cfg.weight_decay;
                w.iter_mut().for_each(|x| *x *= shrink);
            }
            let (m, v) = (self.m_w[l].as_mut_slice(), self.v_w[l].as_mut_slice());
            for (i, &g) in gw[l].as_slice().iter().enumerate() {
                step(&mut w[i], g, &mut m[i], &mut v[i]);
            }
            let b = net.biases[l].as_mut_slice();
            let (m, v) = (self.m_b[l].as_mut_slice(), self.v_b[l].as_mut_slice());
            for (i, &g) in gb[l].as_slice().iter().enumerate() {
                step(&mut b[i], g, &mut m[i], &mut v[i]);
            }
        }
    }
}

/// Splits sample indices into mini-batches with every class spread evenly
/// across batches. Each class is shuffled, its members are assigned evenly
/// spaced positions in `[0, 1)`, and the merged order is cut into
/// `max(1, n / batch_size)` contiguous chunks of near-equal size.
pub fn stratified_batches(
    labels: &[usize],
    num_classes: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(labels.len());
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(rng);
        let n_c = members.len() as f64;
        for (pos, &idx) in members.iter().enumerate() {
            keyed.push(((pos as f64 + 0.5) / n_c, c, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = keyed.len();
    let n_batches = (n / batch_size).max(1);
    (0..n_batches)
        .map(|b| {
            let lo = b * n / n_batches;
            let hi = (b + 1) * n / n_batches;
            keyed[lo..hi].iter().map(|k| k.2).collect()
        })
        .collect()
}

/// Trains a copy of `net`. The run is fully determined by its arguments.
pub fn train(
    net: &DenseNet,
    data: &LabeledDataset,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    loss_cfg.validate()?;
    cfg.validate()?;
    let k = net.num_classes();
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, net expects {}",
            data.dim(),
            net.input_dim()
        )));
    }
    if let Some(&label) = data.labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, num_classes: k });
    }
    let counts = data.class_counts(k);
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass {
            class,
            context: "training set",
        });
    }
    if loss_cfg.uses_batch_terms() && cfg.batch_size < 2 * k {
        return Err(Error::InvalidConfig(format!(
            "batch size {} is below 2*K = {} required by the batch-level loss terms",
            cfg.batch_size,
            2 * k
        )));
    }

    let mut net = net.clone();
    let mut adam = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let batches = stratified_batches(&data.labels, k, cfg.batch_size, &mut rng);
        let mut acc = EpochLog {
            epoch,
            total: 0.0,
            ce: 0.0,
            dist: 0.0,
            variance: 0.0,
            correlation: 0.0,
        };
        for idx in &batches {
            let x = data.inputs.select_rows(idx.iter());
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            if loss_cfg.uses_batch_terms() {
                let mut present = vec![false; k];
                y.iter().for_each(|&c| present[c] = true);
                if let Some(class) = present.iter().position(|p| !p) {
                    return Err(Error::MissingClass {
                        class,
                        context: "mini-batch (class too rare for this batch size)",
                    });
                }
            }
            let trace = net.forward(&x)?;
            let loss = total_loss(&trace, &y, loss_cfg)?;
            let grads = net.backward(&trace, &loss.d_logits, loss.d_penultimate.as_ref(), false)?;
            adam.update(&mut net, &grads.weights, &grads.biases, cfg);
            acc.total += loss.value;
            acc.ce += loss.ce;
            acc.dist += loss.dist;
            acc.variance += loss.variance;
            acc.correlation += loss.correlation;
        }
        let nb = batches.len() as f64;
        acc.total /= nb;
        acc.ce /= nb;
        acc.dist /= nb;
        acc.variance /= nb;
        acc.correlation /= nb;
        log.epochs.push(acc);
    }
    Ok(Trained { net, log })
}
