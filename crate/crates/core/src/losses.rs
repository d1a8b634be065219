//! Composite training objective: cross-entropy, distance loss over class
//! means, and the entropy loss (inverse total variance plus mean squared
//! off-diagonal feature correlation).
//!
//! Conventions:
//! - labels are 0-based class indices;
//! - batch statistics use population normalization (divide by n);
//! - the distance loss averages over unordered class pairs and applies the
//!   negative sign itself, so `w_dist` is a nonnegative magnitude;
//! - the correlation term averages `C_ij^2` over unordered pairs `i < j`;
//! - a feature dimension whose standard deviation is below
//!   [`DEGENERATE_STD`] gets `C_ij = 0` for every `j` and is flagged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::net::ForwardTrace;
use crate::{Error, Result};

pub const DEGENERATE_STD: f64 = 1e-8;

/// Below this total variance the variance term is reported as undefined.
pub const MIN_TOTAL_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Magnitude of the distance weight; the applied coefficient is `-w_dist`.
    pub w_dist: f64,
    /// Weight of the inverse-variance term.
    pub lambda_var: f64,
    /// Weight of the correlation term.
    pub lambda_corr: f64,
    pub enable_dist: bool,
    pub enable_entropy: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::ce_only()
    }
}

impl LossConfig {
    pub fn ce_only() -> Self {
        LossConfig {
            w_dist: 0.0,
            lambda_var: 0.0,
            lambda_corr: 0.0,
            enable_dist: false,
            enable_entropy: false,
        }
    }

    pub fn ce_dist(w_dist: f64) -> Self {
        LossConfig {
            w_dist,
            enable_dist: true,
            ..LossConfig::ce_only()
        }
    }

    pub fn ce_entropy(lambda_var: f64, lambda_corr: f64) -> Self {
        LossConfig {
            lambda_var,
            lambda_corr,
            enable_entropy: true,
            ..LossConfig::ce_only()
        }
    }

    pub fn full(w_dist: f64, lambda_var: f64, lambda_corr: f64) -> Self {
        LossConfig {
            w_dist,
            lambda_var,
            lambda_corr,
            enable_dist: true,
            enable_entropy: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_dist", self.w_dist),
            ("lambda_var", self.lambda_var),
            ("lambda_corr", self.lambda_corr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// The signed distance coefficient (never positive).
    pub fn lambda_dist(&self) -> f64 {
        -self.w_dist
    }

    pub fn dist_active(&self) -> bool {
        self.enable_dist && self.w_dist > 0.0
    }

    pub fn variance_active(&self) -> bool {
        self.enable_entropy && self.lambda_var > 0.0
    }

    pub fn correlation_active(&self) -> bool {
        self.enable_entropy && self.lambda_corr > 0.0
    }

    /// True when any term needs whole-batch statistics.
    pub fn uses_batch_terms(&self) -> bool {
        self.dist_active() || self.variance_active() || self.correlation_active()
    }
}

/// A scalar loss and its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// `None` for classes absent from the batch.
    pub class_means: Vec<Option<DVector<f64>>>,
    pub per_dim_variance: DVector<f64>,
    pub correlation: DMatrix<f64>,
    /// Dimensions whose standard deviation fell below [`DEGENERATE_STD`].
    pub degenerate: Vec<bool>,
    pub class_counts: Vec<usize>,
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    Ok(())
}

fn softmax_row(row: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean negative log-softmax of the true class.
pub fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> Result<LossValue> {
    let (n, k) = logits.shape();
    if n == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    check_labels(labels, n, k)?;
    let mut grad = DMatrix::zeros(n, k);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
        let p = softmax_row(row.iter().copied());
        for c in 0..k {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad[(i, c)] = (p[c] - onehot) / n as f64;
        }
    }
    Ok(LossValue {
        value: total / n as f64,
        grad,
    })
}

fn class_means(
    z: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
) -> (Vec<Option<DVector<f64>>>, Vec<usize>) {
    let d = z.ncols();
    let mut sums = vec![DVector::<f64>::zeros(d); num_classes];
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        sums[y] += z.row(i).transpose();
        counts[y] += 1;
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    (means, counts)
}

fn pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Negative mean pairwise distance between class means, scaled by `1/sqrt(D)`.
pub fn distance_loss(
    z: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<LossValue> {
    let (n, d) = z.shape();
    if n == 0 || d == 0 {
        return Err(Error::Empty("distance-loss batch"));
    }
    check_labels(labels, n, num_classes)?;
    let (means, counts) = class_means(z, labels, num_classes);
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass {
            class,
            context: "batch",
        });
    }
    let means: Vec<DVector<f64>> = means.into_iter().map(Option::unwrap).collect();
    let n_pairs = pairs(num_classes);
    if n_pairs == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad: DMatrix::zeros(n, d),
        });
    }
    let coef = cfg.lambda_dist() / (n_pairs as f64 * (d as f64).sqrt());

    let mut sum_dist = 0.0;
    // d(value)/d(mu_l), accumulated over pairs.
    let mut d_means = vec![DVector::<f64>::zeros(d); num_classes];
    for l in 0..num_classes {
        for k in l + 1..num_classes {
            let diff = &means[l] - &means[k];
            let norm = diff.norm();
            sum_dist += norm;
            if norm > 1e-12 {
                let u = diff / norm;
                d_means[l] += &u;
                d_means[k] -= &u;
            }
        }
    }
    let mut grad = DMatrix::zeros(n, d);
    for (i, &y) in labels.iter().enumerate() {
        let g = &d_means[y] * (coef / counts[y] as f64);
        grad.row_mut(i).copy_from(&g.transpose());
    }
    Ok(LossValue {
        value: coef * sum_dist,
        grad,
    })
}

/// Column-standardized view of a batch.
struct Standardized {
    centered: DMatrix<f64>,
    variance: DVector<f64>,
    std: DVector<f64>,
    degenerate: Vec<bool>,
    /// `centered / std`, with degenerate columns set to zero.
    scaled: DMatrix<f64>,
}

impl Standardized {
    fn new(z: &DMatrix<f64>) -> Self {
        let (n, d) = z.shape();
        let mean = z.row_mean();
        let mut centered = z.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let variance =
            DVector::from_iterator(d, centered.column_iter().map(|c| c.norm_squared() / n as f64));
        let std = variance.map(f64::sqrt);
        let degenerate: Vec<bool> = std.iter().map(|&s| s < DEGENERATE_STD).collect();
        let mut scaled = centered.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            if degenerate[j] {
                col.fill(0.0);
            } else {
                col /= std[j];
            }
        }
        Standardized {
            centered,
            variance,
            std,
            degenerate,
            scaled,
        }
    }

    fn correlation(&self) -> DMatrix<f64> {
        let n = self.scaled.nrows() as f64;
        let mut c = self.scaled.transpose() * &self.scaled / n;
        // Pin the exact symmetric/unit-diagonal form.
        let d = c.nrows();
        for i in 0..d {
            c[(i, i)] = if self.degenerate[i] { 0.0 } else { 1.0 };
            for j in 0..i {
                let v = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }
}

pub fn batch_stats(z: &DMatrix<f64>, labels: &[usize], num_classes: usize) -> Result<BatchStats> {
    if z.nrows() < 2 {
        return Err(Error::InvalidConfig("batch statistics need at least 2 rows".into()));
    }
    check_labels(labels, z.nrows(), num_classes)?;
    let (class_means, class_counts) = class_means(z, labels, num_classes);
    let st = Standardized::new(z);
    Ok(BatchStats {
        class_means,
        correlation: st.correlation(),
        per_dim_variance: st.variance.clone(),
        degenerate: st.degenerate,
        class_counts,
    })
}

fn check_entropy_input(z: &DMatrix<f64>) -> Result<()> {
    if z.nrows() < 2 {
        return Err(Error::InvalidConfig("entropy loss needs a batch of at least 2".into()));
    }
    if z.ncols() < 2 {
        return Err(Error::InvalidConfig("entropy loss needs at least 2 feature dimensions".into()));
    }
    Ok(())
}

/// Unweighted variance term `D / sum_i Var(z_i)` and its gradient.
pub fn variance_term(z: &DMatrix<f64>) -> Result<LossValue> {
    check_entropy_input(z)?;
    let st = Standardized::new(z);
    variance_term_from(&st)
}

fn variance_term_from(st: &Standardized) -> Result<LossValue> {
    let (n, d) = st.centered.shape();
    let total: f64 = st.variance.sum();
    if !(total > MIN_TOTAL_VARIANCE) {
        return Err(Error::ZeroVariance);
    }
    let value = d as f64 / total;
    let scale = -(d as f64) / (total * total) * 2.0 / n as f64;
    Ok(LossValue {
        value,
        grad: &st.centered * scale,
    })
}

/// Unweighted correlation term: mean of `C_ij^2` over pairs `i < j`, and its gradient.
pub fn correlation_term(z: &DMatrix<f64>) -> Result<LossValue> {
    check_entropy_input(z)?;
    let st = Standardized::new(z);
    Ok(correlation_term_from(&st))
}

fn correlation_term_from(st: &Standardized) -> LossValue {
    let (n, d) = st.centered.shape();
    let nf = n as f64;
    let mut c = st.correlation();
    let n_pairs = pairs(d) as f64;
    let mut sum_sq = 0.0;
    for i in 0..d {
        c[(i, i)] = 0.0;
        for j in i + 1..d {
            sum_sq += c[(i, j)] * c[(i, j)];
        }
    }
    let value = sum_sq / n_pairs;

    // dS = (2/n) S G with G the off-diagonal correlation matrix.
    let d_scaled = &st.scaled * &c * (2.0 / (nf * n_pairs));
    let mut d_centered = DMatrix::zeros(n, d);
    for j in 0..d {
        if st.degenerate[j] {
            continue;
        }
        let s = st.scaled.column(j);
        let ds = d_scaled.column(j);
        let proj = s.dot(&ds) / nf;
        let col = (ds - s * proj) / st.std[j];
        d_centered.set_column(j, &col);
    }
    let col_means = d_centered.row_mean();
    for mut row in d_centered.row_iter_mut() {
        row -= &col_means;
    }
    LossValue {
        value,
        grad: d_centered,
    }
}

/// Raw (unweighted) entropy-loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyTerms {
    pub variance: f64,
    pub correlation: f64,
}

pub fn entropy_terms(z: &DMatrix<f64>) -> Result<EntropyTerms> {
    check_entropy_input(z)?;
    let st = Standardized::new(z);
    Ok(EntropyTerms {
        variance: variance_term_from(&st)?.value,
        correlation: correlation_term_from(&st).value,
    })
}

/// `lambda_var * variance_term + lambda_corr * correlation_term`.
pub fn entropy_loss(z: &DMatrix<f64>, cfg: &LossConfig) -> Result<LossValue> {
    check_entropy_input(z)?;
    let st = Standardized::new(z);
    let var = variance_term_from(&st)?;
    let corr = correlation_term_from(&st);
    Ok(LossValue {
        value: cfg.lambda_var * var.value + cfg.lambda_corr * corr.value,
        grad: var.grad * cfg.lambda_var + corr.grad * cfg.lambda_corr,
    })
}

/// Components and gradients of the total objective for one batch.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub ce: f64,
    /// Signed distance term (≤ 0).
    pub dist: f64,
    /// Weighted variance term.
    pub variance: f64,
    /// Weighted correlation term.
    pub correlation: f64,
    pub d_logits: DMatrix<f64>,
    /// `None` when no feature-level term is active.
    pub d_penultimate: Option<DMatrix<f64>>,
}

/// Sum of the enabled terms. A term with zero weight is skipped entirely.
pub fn total_loss(trace: &ForwardTrace, labels: &[usize], cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    let logits = trace.logits();
    let ce = cross_entropy(logits, labels)?;
    let mut out = TotalLoss {
        value: ce.value,
        ce: ce.value,
        dist: 0.0,
        variance: 0.0,
        correlation: 0.0,
        d_logits: ce.grad,
        d_penultimate: None,
    };
    if !cfg.uses_batch_terms() {
        return Ok(out);
    }
    let z = trace.penultimate();
    let mut d_z = DMatrix::zeros(z.nrows(), z.ncols());
    if cfg.dist_active() {
        let dist = distance_loss(z, labels, logits.ncols(), cfg)?;
        out.dist = dist.value;
        d_z += dist.grad;
    }
    if cfg.variance_active() || cfg.correlation_active() {
        check_entropy_input(z)?;
        let st = Standardized::new(z);
        if cfg.variance_active() {
            let var = variance_term_from(&st)?;
            out.variance = cfg.lambda_var * var.value;
            d_z += var.grad * cfg.lambda_var;
        }
        if cfg.correlation_active() {
            let corr = correlation_term_from(&st);
            out.correlation = cfg.lambda_corr * corr.value;
            d_z += corr.grad * cfg.lambda_corr;
        }
    }
    out.value = out.ce + out.dist + out.variance + out.correlation;
    out.d_penultimate = Some(d_z);
    Ok(out)
}
