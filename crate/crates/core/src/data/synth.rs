//! Two-dimensional Gaussian-blob world with three constructed shift categories.
//!
//! With `g` the centroid of the cluster centers `c_a`:
//! - category 1 walks a source cluster toward the midpoint `m_ab` of a
//!   neighbouring pair, `c_a + δ (m_ab - c_a)` for `δ ∈ [0, 1]`, ending between
//!   two classes on the decision boundary;
//! - category 2 pushes a cluster radially outward, `c_a + δ û_a` with
//!   `û_a = (c_a - g)/|c_a - g|`, away from both the boundary and the data;
//! - category 3 reaches the perpendicular bisector of a pair and then moves
//!   along it away from `g`: `c_a + min(δ, 1)(m_ab - c_a) + δ n̂_ab`, with
//!   `n̂_ab` the unit normal of the segment pointing away from `g`.
//!
//! Every category reduces to in-distribution sampling at `δ = 0`, and every
//! sample keeps the label of its source cluster.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub centers: Vec<[f64; 2]>,
    pub spread: f64,
    pub n_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Three classes at the vertices of an equilateral triangle with side 6.
    fn default() -> Self {
        SynthConfig::triangle(6.0, 1.0, 200, 0)
    }
}

impl SynthConfig {
    /// Equilateral triangle of the given side length centred on the origin.
    pub fn triangle(side: f64, spread: f64, n_per_class: usize, seed: u64) -> Self {
        let radius = side / 3f64.sqrt();
        let centers = (0..3)
            .map(|i| {
                let angle = std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
                [radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        SynthConfig {
            centers,
            spread,
            n_per_class,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.len() < 2 {
            return Err(Error::InvalidConfig("need at least two cluster centers".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cluster spread must be positive, got {}",
                self.spread
            )));
        }
        if self.n_per_class == 0 {
            return Err(Error::InvalidConfig("n_per_class must be positive".into()));
        }
        for (i, a) in self.centers.iter().enumerate() {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig(format!("center {i} is not finite")));
            }
            for b in &self.centers[..i] {
                if a == b {
                    return Err(Error::InvalidConfig(format!("center {i} duplicates another")));
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> [f64; 2] {
        let k = self.centers.len() as f64;
        let sx: f64 = self.centers.iter().map(|c| c[0]).sum();
        let sy: f64 = self.centers.iter().map(|c| c[1]).sum();
        [sx / k, sy / k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NasCategory {
    /// Near the decision boundary and near ID data.
    One,
    /// Far from the decision boundary and from ID data.
    Two,
    /// Near the decision boundary, far from ID data.
    Three,
}

impl NasCategory {
    pub const ALL: [NasCategory; 3] = [NasCategory::One, NasCategory::Two, NasCategory::Three];

    pub fn number(self) -> u8 {
        match self {
            NasCategory::One => 1,
            NasCategory::Two => 2,
            NasCategory::Three => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(NasCategory::One),
            2 => Ok(NasCategory::Two),
            3 => Ok(NasCategory::Three),
            other => Err(Error::InvalidConfig(format!(
                "NAS category must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

impl fmt::Display for NasCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cat{}", self.number())
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn unit(v: [f64; 2], fallback: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n < 1e-12 {
        fallback
    } else {
        [v[0] / n, v[1] / n]
    }
}

/// One shifted source: the cluster the samples come from and their mean.
struct Source {
    class: usize,
    mean: [f64; 2],
}

fn sources(cfg: &SynthConfig, category: NasCategory, delta: f64) -> Vec<Source> {
    let g = cfg.centroid();
    let k = cfg.num_classes();
    let ordered_pairs = || (0..k).flat_map(move |a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)));
    match category {
        NasCategory::Two => (0..k)
            .map(|a| {
                let c = cfg.centers[a];
                let u = unit(sub(c, g), [1.0, 0.0]);
                Source {
                    class: a,
                    mean: [c[0] + delta * u[0], c[1] + delta * u[1]],
                }
            })
            .collect(),
        NasCategory::One => ordered_pairs()
            .map(|(a, b)| {
                let (ca, cb) = (cfg.centers[a], cfg.centers[b]);
                let mid = [(ca[0] + cb[0]) / 2.0, (ca[1] + cb[1]) / 2.0];
                Source {
                    class: a,
                    mean: [ca[0] + delta * (mid[0] - ca[0]), ca[1] + delta * (mid[1] - ca[1])],
                }
            })
            .collect(),
        NasCategory::Three => ordered_pairs()
            .map(|(a, b)| {
                let (ca, cb) = (cfg.centers[a], cfg.centers[b]);
                let mid = [(ca[0] + cb[0]) / 2.0, (ca[1] + cb[1]) / 2.0];
                let along = sub(cb, ca);
                let mut normal = unit([-along[1], along[0]], [0.0, 1.0]);
                let outward = sub(mid, g);
                if normal[0] * outward[0] + normal[1] * outward[1] < 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                let t = delta.min(1.0);
                Source {
                    class: a,
                    mean: [
                        ca[0] + t * (mid[0] - ca[0]) + delta * normal[0],
                        ca[1] + t * (mid[1] - ca[1]) + delta * normal[1],
                    ],
                }
            })
            .collect(),
    }
}

fn gaussian_sample(mean: [f64; 2], spread: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let nx: f64 = StandardNormal.sample(rng);
    let ny: f64 = StandardNormal.sample(rng);
    [mean[0] + spread * nx, mean[1] + spread * ny]
}

/// In-distribution data: `n_per_class` isotropic Gaussian samples per center.
pub fn gen_id(cfg: &SynthConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let k = cfg.num_classes();
    let n = k * cfg.n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (c, &center) in cfg.centers.iter().enumerate() {
        for _ in 0..cfg.n_per_class {
            data.extend(gaussian_sample(center, cfg.spread, &mut rng));
            labels.push(c);
        }
    }
    LabeledDataset::new(DMatrix::from_row_slice(n, 2, &data), labels, k)
        .map(|d| d.with_meta("shift", 0.0))
}

/// `n` shifted samples of the given category at shift degree `delta`,
/// assigned round-robin to the category's sources.
pub fn gen_nas(
    cfg: &SynthConfig,
    category: NasCategory,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    cfg.validate()?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!("shift degree must be >= 0, got {delta}")));
    }
    if category == NasCategory::One && delta > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "category 1 shift is a fraction of the half-segment and must lie in [0, 1], got {delta}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let srcs = sources(cfg, category, delta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let s = &srcs[i % srcs.len()];
        data.extend(gaussian_sample(s.mean, cfg.spread, &mut rng));
        labels.push(s.class);
    }
    LabeledDataset::new(DMatrix::from_row_slice(n, 2, &data), labels, cfg.num_classes())
        .map(|d| d.with_meta(category.to_string(), delta))
}

#[derive(Debug, Clone)]
pub struct ShiftSequence {
    pub category: NasCategory,
    pub steps: Vec<(f64, LabeledDataset)>,
}

impl ShiftSequence {
    pub fn deltas(&self) -> Vec<f64> {
        self.steps.iter().map(|(d, _)| *d).collect()
    }
}

/// SplitMix64 finalizer; decorrelates per-step seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gen_shift_sequence(
    cfg: &SynthConfig,
    category: NasCategory,
    deltas: &[f64],
    n: usize,
    seed: u64,
) -> Result<ShiftSequence> {
    match deltas.first() {
        None => return Err(Error::InvalidConfig("shift list is empty".into())),
        Some(&d) if d != 0.0 => {
            return Err(Error::InvalidConfig("shift list must start at 0".into()))
        }
        _ => {}
    }
    if let Some(w) = deltas.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig(format!(
            "shift list must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    let steps = deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| Ok((d, gen_nas(cfg, category, d, n, derive_seed(seed, i as u64))?)))
        .collect::<Result<_>>()?;
    Ok(ShiftSequence { category, steps })
}
