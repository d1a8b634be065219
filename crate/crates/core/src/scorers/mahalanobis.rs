//! Class-conditional Gaussian scorer with a tied covariance per layer.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::container::{Block, Container};
use crate::net::ForwardTrace;
use crate::{Error, Result};

/// Which activations of a trace a layer-wise scorer reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    Penultimate,
    AllHidden,
    /// Explicit activation indices (0 = input).
    Indices(Vec<usize>),
}

impl LayerSelection {
    pub fn resolve(&self, trace: &ForwardTrace) -> Result<Vec<usize>> {
        let idx = match self {
            LayerSelection::Penultimate => vec![trace.penultimate_index()],
            LayerSelection::AllHidden => {
                let hidden: Vec<usize> = trace.hidden_indices().collect();
                if hidden.is_empty() {
                    vec![trace.penultimate_index()]
                } else {
                    hidden
                }
            }
            LayerSelection::Indices(v) => v.clone(),
        };
        if idx.is_empty() {
            return Err(Error::InvalidConfig("no layers selected".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&l| l >= trace.num_layers()) {
            return Err(Error::Shape(format!(
                "layer {bad} requested but the trace has {} activations",
                trace.num_layers()
            )));
        }
        Ok(idx)
    }
}

/// Regularization added to the diagonal of each tied covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `factor * trace(Σ) / D`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisLayer {
    /// Activation index in the trace the statistics were fitted on.
    pub layer: usize,
    pub class_means: Vec<DVector<f64>>,
    pub precision: DMatrix<f64>,
    pub weight: f64,
}

impl MahalanobisLayer {
    /// Fits class means and the inverse tied covariance on one feature matrix.
    pub fn fit(
        layer: usize,
        features: &DMatrix<f64>,
        labels: &[usize],
        num_classes: usize,
        ridge: Ridge,
    ) -> Result<Self> {
        let (n, d) = features.shape();
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        let mut sums = vec![DVector::<f64>::zeros(d); num_classes];
        let mut counts = vec![0usize; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            sums[y] += features.row(i).transpose();
            counts[y] += 1;
        }
        if let Some(class) = counts.iter().position(|&c| c < 2) {
            return Err(Error::InvalidConfig(format!(
                "class {class} has {} samples; the covariance fit needs at least 2",
                counts[class]
            )));
        }
        let means: Vec<DVector<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let mut centered = features.clone();
        for (i, &y) in labels.iter().enumerate() {
            let mut row = centered.row_mut(i);
            row -= means[y].transpose();
        }
        let mut cov = centered.transpose() * &centered / n as f64;
        let r = match ridge {
            Ridge::Relative(f) => f * cov.trace() / d as f64,
            Ridge::Absolute(a) => a,
        };
        if !(r >= 0.0) {
            return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {r}")));
        }
        for i in 0..d {
            cov[(i, i)] += r;
        }
        let precision = invert_spd(cov)?;
        Ok(MahalanobisLayer {
            layer,
            class_means: means,
            precision,
            weight: 1.0,
        })
    }

    /// Largest negative squared Mahalanobis distance over classes, per row.
    pub fn score_features(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.precision.nrows();
        if features.ncols() != d {
            return Err(Error::Shape(format!(
                "features have {} columns, model layer {} expects {d}",
                features.ncols(),
                self.layer
            )));
        }
        Ok(features
            .row_iter()
            .map(|row| {
                let x = row.transpose();
                self.class_means
                    .iter()
                    .map(|mu| {
                        let diff = &x - mu;
                        -diff.dot(&(&self.precision * &diff))
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect())
    }
}

fn invert_spd(mut cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    let mut p = chol.inverse();
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(p)
}

/// Weighted sum of per-layer Mahalanobis scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    pub layers: Vec<MahalanobisLayer>,
}

/// Fits one layer model per selected activation, all with unit weight.
pub fn fit_mahalanobis(
    trace: &ForwardTrace,
    labels: &[usize],
    num_classes: usize,
    layers: &LayerSelection,
    ridge: Ridge,
) -> Result<MahalanobisModel> {
    let idx = layers.resolve(trace)?;
    let layers = idx
        .into_iter()
        .map(|l| MahalanobisLayer::fit(l, &trace.post[l], labels, num_classes, ridge))
        .collect::<Result<_>>()?;
    Ok(MahalanobisModel { layers })
}

/// Per-sample ID scores (higher means closer to some class mean).
pub fn score_mahalanobis(model: &MahalanobisModel, trace: &ForwardTrace) -> Result<Vec<f64>> {
    let mut total = vec![0.0; trace.batch_size()];
    for layer in &model.layers {
        let features = trace.layer(layer.layer).ok_or_else(|| {
            Error::Shape(format!("trace has no activation {}", layer.layer))
        })?;
        for (t, s) in total.iter_mut().zip(layer.score_features(features)?) {
            *t += layer.weight * s;
        }
    }
    Ok(total)
}

impl MahalanobisModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("mahalanobis");
        c.set_attr("num_layers", self.layers.len().to_string());
        for (i, l) in self.layers.iter().enumerate() {
            c.set_attr(format!("layer{i}"), format!("{} {:e}", l.layer, l.weight));
            let k = l.class_means.len();
            let d = l.precision.nrows();
            let means = DMatrix::from_fn(k, d, |c, j| l.class_means[c][j]);
            c.push_block(Block::from_matrix(format!("means{i}"), &means));
            c.push_block(Block::from_matrix(format!("precision{i}"), &l.precision));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("mahalanobis")?;
        let n: usize = c.parse_attr("num_layers")?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let spec = c.attr(&format!("layer{i}"))?;
            let mut parts = spec.split_whitespace();
            let layer = parts.next().and_then(|s| s.parse().ok());
            let weight = parts.next().and_then(|s| s.parse().ok());
            let (Some(layer), Some(weight)) = (layer, weight) else {
                return Err(c.format_error(format!("bad layer{i} attribute '{spec}'")));
            };
            let means = c.block(&format!("means{i}"))?.to_matrix();
            let precision = c.block(&format!("precision{i}"))?.to_matrix();
            if precision.nrows() != precision.ncols() || precision.nrows() != means.ncols() {
                return Err(c.format_error(format!("layer {i} blocks disagree in shape")));
            }
            layers.push(MahalanobisLayer {
                layer,
                class_means: means.row_iter().map(|r| r.transpose()).collect(),
                precision,
                weight,
            });
        }
        Ok(MahalanobisModel { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MahalanobisModel::from_container(&Container::read(path)?)
    }
}
