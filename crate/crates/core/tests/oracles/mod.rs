//! Slow, direct reference implementations used to cross-check the library.
//! Also compiled into the command-line crate's acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use shiftscope::losses::{total_loss, LossConfig};
use shiftscope::net::{Activation, DenseNet};

// ---------------------------------------------------------------- metrics

/// Pairwise Mann-Whitney count.
pub fn auroc(id: &[f64], nas: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in nas {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * nas.len()) as f64
}

fn distinct_desc(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

/// Average precision with "score >= t means positive", recomputing the
/// confusion counts from scratch at every distinct threshold.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> f64 {
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for t in distinct_desc(pos.iter().chain(neg).copied()) {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        area += (recall - last_recall) * tp / (tp + fp);
        last_recall = recall;
    }
    area
}

pub fn aupr_in(id: &[f64], nas: &[f64]) -> f64 {
    average_precision(id, nas)
}

pub fn aupr_out(id: &[f64], nas: &[f64]) -> f64 {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    average_precision(&neg(nas), &neg(id))
}

/// Tries every candidate threshold; keeps the largest one accepting at
/// least `target` of the ID scores.
pub fn tnr_at_tpr(id: &[f64], nas: &[f64], target: f64) -> f64 {
    let mut best: Option<f64> = None;
    for t in id.iter().chain(nas).copied() {
        let tpr = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
        if tpr >= target && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the smallest score always qualifies");
    nas.iter().filter(|&&s| s < t).count() as f64 / nas.len() as f64
}

/// Best balanced accuracy over every score, the midpoints between
/// neighbouring scores and both infinities.
pub fn detection_accuracy(id: &[f64], nas: &[f64]) -> f64 {
    let mut cands: Vec<f64> = id.iter().chain(nas).copied().collect();
    cands.sort_by(f64::total_cmp);
    let mids: Vec<f64> = cands.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    cands.extend(mids);
    cands.extend([f64::INFINITY, f64::NEG_INFINITY]);
    cands
        .into_iter()
        .map(|t| {
            let acc = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
            let rej = nas.iter().filter(|&&s| s < t).count() as f64 / nas.len() as f64;
            0.5 * acc + 0.5 * rej
        })
        .fold(0.0, f64::max)
}

/// Random score pair of sizes 1..=50. Half the draws come from a small
/// integer range so ties within and across sides are common.
pub fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n_id = rng.random_range(1..=50);
    let n_nas = rng.random_range(1..=50);
    let coarse = rng.random_bool(0.5);
    let shift: f64 = rng.random_range(-1.0..1.0);
    let mut draw = |n: usize, offset: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..6) as f64 + offset.round()
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    z + offset
                }
            })
            .collect()
    };
    let id = draw(n_id, shift);
    let nas = draw(n_nas, 0.0);
    (id, nas)
}

// ---------------------------------------------------------------- linear algebra

/// Singular values from the eigenvalues of the Gram matrix, descending.
pub fn singular_values_via_eigen(x: &DMatrix<f64>) -> Vec<f64> {
    let g = if x.nrows() >= x.ncols() {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    let mut ev: Vec<f64> = SymmetricEigen::new(g)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn residual_mass_via_eigen(x: &DMatrix<f64>) -> f64 {
    singular_values_via_eigen(x).iter().skip(2).sum()
}

/// Max over classes of `-(x - mu)^T P (x - mu)`, with means and the pooled
/// covariance computed by explicit loops.
pub fn mahalanobis_scores(train: &DMatrix<f64>, labels: &[usize], k: usize, ridge: f64, test: &DMatrix<f64>) -> Vec<f64> {
    let d = train.ncols();
    let mut means = vec![DVector::<f64>::zeros(d); k];
    let mut counts = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            means[y][j] += train[(i, j)];
        }
        counts[y] += 1;
    }
    for c in 0..k {
        means[c] /= counts[c] as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (i, &y) in labels.iter().enumerate() {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (train[(i, a)] - means[y][a]) * (train[(i, b)] - means[y][b]);
            }
        }
    }
    cov /= labels.len() as f64;
    for a in 0..d {
        cov[(a, a)] += ridge;
    }
    let p = cov.try_inverse().expect("covariance is invertible");
    (0..test.nrows())
        .map(|i| {
            let x = test.row(i).transpose();
            means
                .iter()
                .map(|mu| {
                    let diff = &x - mu;
                    -(diff.transpose() * &p * &diff)[(0, 0)]
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

// ---------------------------------------------------------------- gradients

pub struct GradCase {
    pub net: DenseNet,
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub loss: LossConfig,
}

fn params(net: &DenseNet) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    (net.weights().to_vec(), net.biases().to_vec())
}

/// Smallest |pre-activation| over the hidden layers, recomputed by hand.
pub fn kink_margin(net: &DenseNet, x: &DMatrix<f64>) -> f64 {
    let (w, b) = params(net);
    let mut a = x.clone();
    let mut margin = f64::INFINITY;
    for l in 0..w.len() - 1 {
        let mut z = &a * &w[l];
        for mut row in z.row_iter_mut() {
            row += b[l].transpose();
        }
        margin = margin.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        a = z.map(|v| v.max(0.0));
    }
    margin
}

/// A random small net, labelled batch containing every class, and loss
/// configuration. `index` cycles through the four loss variants.
pub fn random_case(seed: u64, index: usize) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=4);
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(2..=4)];
    for _ in 0..depth {
        sizes.push(rng.random_range(3..=7));
    }
    sizes.push(k);
    let activation = if index % 3 == 2 { Activation::Tanh } else { Activation::Relu };
    let n = rng.random_range(3 * k..=24);
    let loss = match index % 4 {
        0 => LossConfig::ce_only(),
        1 => LossConfig::ce_dist(rng.random_range(0.05..1.0)),
        2 => LossConfig::ce_entropy(rng.random_range(0.01..1.0), rng.random_range(0.001..1.0)),
        _ => LossConfig::full(
            rng.random_range(0.05..1.0),
            rng.random_range(0.01..1.0),
            rng.random_range(0.001..1.0),
        ),
    };
    loop {
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let weights: Vec<DMatrix<f64>> = sizes
            .windows(2)
            .map(|p| DMatrix::from_fn(p[0], p[1], |_, _| normal() / (p[0] as f64).sqrt()))
            .collect();
        let biases: Vec<DVector<f64>> = sizes[1..]
            .iter()
            .map(|&s| DVector::from_fn(s, |_, _| 0.3 * normal()))
            .collect();
        let inputs = DMatrix::from_fn(n, sizes[0], |_, _| normal());
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let net = DenseNet::from_parts(weights, biases, activation, seed).unwrap();
        let margin = match activation {
            Activation::Relu => kink_margin(&net, &inputs),
            _ => f64::INFINITY,
        };
        if margin > 1e-3 && has_no_flat_feature(&net, &inputs) {
            return GradCase {
                net,
                inputs,
                labels,
                loss,
            };
        }
    }
}

/// Rejects batches where a penultimate unit is dead on every row; the
/// entropy terms switch that dimension off, which is not differentiable.
fn has_no_flat_feature(net: &DenseNet, x: &DMatrix<f64>) -> bool {
    let z = net.forward(x).unwrap().penultimate().clone();
    z.column_iter().all(|c| {
        let m = c.mean();
        c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64 > 1e-6
    })
}

pub fn loss_value(net: &DenseNet, x: &DMatrix<f64>, labels: &[usize], cfg: &LossConfig) -> f64 {
    total_loss(&net.forward(x).unwrap(), labels, cfg).unwrap().value
}

/// Largest relative error between the analytic gradient and central
/// differences, over every weight and bias entry.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(case: &GradCase, h: f64, floor: f64) -> f64 {
    let GradCase {
        net,
        inputs,
        labels,
        loss,
    } = case;
    let trace = net.forward(inputs).unwrap();
    let tl = total_loss(&trace, labels, loss).unwrap();
    let g = net
        .backward(&trace, &tl.d_logits, tl.d_penultimate.as_ref(), false)
        .unwrap();
    let (w, b) = params(net);
    let act = net.activation();
    let eval = |w: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>| {
        let p = DenseNet::from_parts(w, b, act, 0).unwrap();
        loss_value(&p, inputs, labels, loss)
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst: f64 = 0.0;
    for l in 0..w.len() {
        for i in 0..w[l].len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[l][i] += h;
            wm[l][i] -= h;
            let fd = (eval(wp, b.clone()) - eval(wm, b.clone())) / (2.0 * h);
            worst = worst.max(rel(g.weights[l][i], fd));
        }
        for i in 0..b[l].len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[l][i] += h;
            bm[l][i] -= h;
            let fd = (eval(w.clone(), bp) - eval(w.clone(), bm)) / (2.0 * h);
            worst = worst.max(rel(g.biases[l][i], fd));
        }
    }
    worst
}
