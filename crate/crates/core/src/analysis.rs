//! Feature-space diagnostics: PCA projections, confidence-vs-shift curves and
//! 2D ID-score landscapes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ShiftSequence;
use crate::net::DenseNet;
use crate::scorers::{score_msp, Detector, ScorerKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// One principal direction per row, unit norm.
    pub directions: DMatrix<f64>,
    /// Fraction of total variance captured by each direction.
    pub explained: Vec<f64>,
}

/// Fits the top-`k` principal directions of `features` (rows are samples).
///
/// Each direction's sign is fixed so that its largest-magnitude entry is positive.
pub fn pca_fit(features: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidConfig(format!(
            "cannot extract {k} components from a {n}x{d} matrix"
        )));
    }
    let mean = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut directions = DMatrix::zeros(k, d);
    let mut explained = Vec::with_capacity(k);
    for (r, &i) in order.iter().take(k).enumerate() {
        let mut dir = v_t.row(i).clone_owned();
        let pivot = dir.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            dir = -dir;
        }
        directions.set_row(r, &dir);
        explained.push(if total > 0.0 { sv[i] * sv[i] / total } else { 0.0 });
    }
    Ok(PcaModel {
        mean,
        directions,
        explained,
    })
}

pub fn pca_project(model: &PcaModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != model.mean.len() {
        return Err(Error::Shape(format!(
            "features have {} columns, PCA model expects {}",
            features.ncols(),
            model.mean.len()
        )));
    }
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= model.mean.transpose();
    }
    Ok(centered * model.directions.transpose())
}

/// Writes `pc1,pc2,label,delta` rows (labels 1-based).
pub fn write_projection_csv(
    path: impl AsRef<Path>,
    projected: &DMatrix<f64>,
    labels: &[usize],
    delta: f64,
) -> Result<()> {
    let path = path.as_ref();
    if projected.ncols() < 2 || projected.nrows() != labels.len() {
        return Err(Error::Shape("projection must have 2 columns and one label per row".into()));
    }
    let mut out = String::from("pc1,pc2,label,delta\n");
    for (row, &l) in projected.row_iter().zip(labels) {
        let _ = writeln!(out, "{:?},{:?},{},{:?}", row[0], row[1], l + 1, delta);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean maximum softmax probability at every shift degree.
pub fn confidence_curve(net: &DenseNet, seq: &ShiftSequence) -> Result<Vec<(f64, f64)>> {
    if seq.steps.is_empty() {
        return Err(Error::Empty("shift sequence"));
    }
    seq.steps
        .iter()
        .map(|(delta, data)| {
            let logits = net.logits(&data.inputs)?;
            let total: f64 = logits
                .row_iter()
                .map(|r| score_msp(&r.iter().copied().collect::<Vec<_>>()))
                .sum();
            Ok((*delta, total / data.len() as f64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::InvalidConfig("landscape bounds must have max > min".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLandscape {
    pub bounds: GridBounds,
    pub nx: usize,
    pub ny: usize,
    pub scorer: ScorerKind,
    /// Row-major over y then x: `scores[iy * nx + ix]`.
    pub scores: Vec<f64>,
}

impl ScoreLandscape {
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        cell_center(&self.bounds, self.nx, self.ny, ix, iy)
    }

    pub fn score_at(&self, ix: usize, iy: usize) -> f64 {
        self.scores[iy * self.nx + ix]
    }

    /// Cell index `(ix, iy)` of the highest score (first on ties).
    pub fn argmax_cell(&self) -> (usize, usize) {
        let i = crate::net::argmax(self.scores.iter().copied());
        (i % self.nx, i / self.nx)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,score\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let [x, y] = self.cell_center(ix, iy);
                let _ = writeln!(out, "{x:?},{y:?},{:?}", self.score_at(ix, iy));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn cell_center(b: &GridBounds, nx: usize, ny: usize, ix: usize, iy: usize) -> [f64; 2] {
    let dx = (b.x_max - b.x_min) / nx as f64;
    let dy = (b.y_max - b.y_min) / ny as f64;
    [b.x_min + (ix as f64 + 0.5) * dx, b.y_min + (iy as f64 + 0.5) * dy]
}

/// Grid cell centres of a landscape, one row per cell in score order.
pub fn grid_points(bounds: &GridBounds, nx: usize, ny: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nx * ny, 2, |i, j| cell_center(bounds, nx, ny, i % nx, i / nx)[j])
}

/// Evaluates a scorer at every cell centre of an `nx` by `ny` grid.
pub fn score_landscape(
    detector: &Detector,
    scorer: ScorerKind,
    bounds: GridBounds,
    nx: usize,
    ny: usize,
) -> Result<ScoreLandscape> {
    if detector.net.input_dim() != 2 {
        return Err(Error::Shape(format!(
            "score landscapes need a 2D input net, this one takes {} inputs",
            detector.net.input_dim()
        )));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidConfig("landscape resolution must be at least 2 per axis".into()));
    }
    bounds.validate()?;
    let points = grid_points(&bounds, nx, ny);
    let scores = detector.score(scorer, &points)?;
    Ok(ScoreLandscape {
        bounds,
        nx,
        ny,
        scorer,
        scores,
    })
}
