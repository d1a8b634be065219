//! Dense-layer analogue of gram-matrix deviation scoring.
//!
//! For an activation vector `a` and order `p`, the gram features are the
//! upper-triangular entries (diagonal included) of `(a^p)(a^p)^T`, with the
//! power taken elementwise. Fitting records per-class min/max of every
//! entry; scoring sums the normalized bound violations
//! `max(0, min - v, v - max) / (|min| + |max| + 1e-9)` under the predicted
//! class and negates the total.

use std::path::Path;

use nalgebra::DMatrix;

use super::mahalanobis::LayerSelection;
use crate::container::{Block, Container};
use crate::net::{argmax, ForwardTrace};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GramBounds {
    pub layers: Vec<usize>,
    pub orders: Vec<u32>,
    /// `mins[class][slot]`, where slot enumerates (layer, order) pairs in order.
    pub mins: Vec<Vec<Vec<f64>>>,
    pub maxs: Vec<Vec<Vec<f64>>>,
}

fn gram_features(a: impl Iterator<Item = f64>, order: u32) -> Vec<f64> {
    let powered: Vec<f64> = a.map(|v| v.powi(order as i32)).collect();
    let d = powered.len();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(powered[i] * powered[j]);
        }
    }
    out
}

impl GramBounds {
    /// Fits bounds from one feature matrix per layer (rows are samples).
    pub fn fit_features(
        layers: Vec<usize>,
        features: &[&DMatrix<f64>],
        labels: &[usize],
        num_classes: usize,
        orders: &[u32],
    ) -> Result<Self> {
        if orders.is_empty() || orders.contains(&0) {
            return Err(Error::InvalidConfig("gram orders must be positive integers".into()));
        }
        if features.is_empty() || features.len() != layers.len() {
            return Err(Error::InvalidConfig("one feature matrix per layer is required".into()));
        }
        let n = labels.len();
        if let Some(f) = features.iter().find(|f| f.nrows() != n) {
            return Err(Error::Shape(format!("{} feature rows for {n} labels", f.nrows())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        let mut counts = vec![0usize; num_classes];
        labels.iter().for_each(|&l| counts[l] += 1);
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass {
                class,
                context: "gram training set",
            });
        }

        let slots: Vec<usize> = features
            .iter()
            .flat_map(|f| orders.iter().map(move |_| f.ncols() * (f.ncols() + 1) / 2))
            .collect();
        let mut mins: Vec<Vec<Vec<f64>>> = (0..num_classes)
            .map(|_| slots.iter().map(|&m| vec![f64::INFINITY; m]).collect())
            .collect();
        let mut maxs: Vec<Vec<Vec<f64>>> = (0..num_classes)
            .map(|_| slots.iter().map(|&m| vec![f64::NEG_INFINITY; m]).collect())
            .collect();
        for (i, &y) in labels.iter().enumerate() {
            let mut slot = 0;
            for f in features {
                for &p in orders {
                    let g = gram_features(f.row(i).iter().copied(), p);
                    for (e, v) in g.into_iter().enumerate() {
                        let lo = &mut mins[y][slot][e];
                        *lo = lo.min(v);
                        let hi = &mut maxs[y][slot][e];
                        *hi = hi.max(v);
                    }
                    slot += 1;
                }
            }
        }
        Ok(GramBounds {
            layers,
            orders: orders.to_vec(),
            mins,
            maxs,
        })
    }

    /// Scores rows given the per-layer features and the class to compare against.
    pub fn score_features(&self, features: &[&DMatrix<f64>], classes: &[usize]) -> Result<Vec<f64>> {
        if features.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} feature matrices for {} fitted layers",
                features.len(),
                self.layers.len()
            )));
        }
        let num_classes = self.mins.len();
        if let Some(&label) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        for (l, f) in features.iter().enumerate() {
            let expected = self.mins[0][l * self.orders.len()].len();
            if f.ncols() * (f.ncols() + 1) / 2 != expected || f.nrows() != classes.len() {
                return Err(Error::Shape(format!("layer {} features have the wrong shape", self.layers[l])));
            }
        }
        Ok(classes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut deviation = 0.0;
                let mut slot = 0;
                for f in features {
                    for &p in &self.orders {
                        let g = gram_features(f.row(i).iter().copied(), p);
                        let (lo, hi) = (&self.mins[c][slot], &self.maxs[c][slot]);
                        for (e, v) in g.into_iter().enumerate() {
                            let over = (lo[e] - v).max(v - hi[e]).max(0.0);
                            if over > 0.0 {
                                deviation += over / (lo[e].abs() + hi[e].abs() + NORM_EPS);
                            }
                        }
                        slot += 1;
                    }
                }
                -deviation
            })
            .collect())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("gram");
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        c.set_attr("layers", join(&self.layers));
        c.set_attr(
            "orders",
            join(&self.orders.iter().map(|&o| o as usize).collect::<Vec<_>>()),
        );
        c.set_attr("num_classes", self.mins.len().to_string());
        for (class, (lo, hi)) in self.mins.iter().zip(&self.maxs).enumerate() {
            for (slot, (l, h)) in lo.iter().zip(hi).enumerate() {
                let m = DMatrix::from_fn(2, l.len(), |r, e| if r == 0 { l[e] } else { h[e] });
                c.push_block(Block::from_matrix(format!("c{class}s{slot}"), &m));
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("gram")?;
        let parse_list = |key: &str| -> Result<Vec<usize>> {
            c.attr(key)?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| c.format_error(format!("bad {key} entry '{s}'"))))
                .collect()
        };
        let layers = parse_list("layers")?;
        let orders: Vec<u32> = parse_list("orders")?.into_iter().map(|o| o as u32).collect();
        let k: usize = c.parse_attr("num_classes")?;
        let n_slots = layers.len() * orders.len();
        let mut mins = Vec::with_capacity(k);
        let mut maxs = Vec::with_capacity(k);
        for class in 0..k {
            let mut lo = Vec::with_capacity(n_slots);
            let mut hi = Vec::with_capacity(n_slots);
            for slot in 0..n_slots {
                let b = c.block(&format!("c{class}s{slot}"))?;
                if b.rows != 2 {
                    return Err(c.format_error(format!("bound block c{class}s{slot} must have 2 rows")));
                }
                lo.push(b.data[..b.cols].to_vec());
                hi.push(b.data[b.cols..].to_vec());
            }
            mins.push(lo);
            maxs.push(hi);
        }
        Ok(GramBounds {
            layers,
            orders,
            mins,
            maxs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        GramBounds::from_container(&Container::read(path)?)
    }
}

pub fn fit_gram(
    trace: &ForwardTrace,
    labels: &[usize],
    num_classes: usize,
    layers: &LayerSelection,
    orders: &[u32],
) -> Result<GramBounds> {
    let idx = layers.resolve(trace)?;
    let feats: Vec<&DMatrix<f64>> = idx.iter().map(|&l| &trace.post[l]).collect();
    GramBounds::fit_features(idx.clone(), &feats, labels, num_classes, orders)
}

/// Per-sample ID scores; deviations are measured against the net's predicted class.
pub fn score_gram(bounds: &GramBounds, trace: &ForwardTrace) -> Result<Vec<f64>> {
    let feats: Vec<&DMatrix<f64>> = bounds
        .layers
        .iter()
        .map(|&l| trace.layer(l).ok_or_else(|| Error::Shape(format!("trace has no activation {l}"))))
        .collect::<Result<_>>()?;
    let predicted: Vec<usize> = trace
        .logits()
        .row_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect();
    bounds.score_features(&feats, &predicted)
}
