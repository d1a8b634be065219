//! In-distribution score functions. Every scorer returns "higher = more ID".

mod gram;
mod mahalanobis;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::net::{argmax, DenseNet};
use crate::{Error, Result};

pub use gram::{fit_gram, score_gram, GramBounds};
pub use mahalanobis::{
    fit_mahalanobis, score_mahalanobis, LayerSelection, MahalanobisLayer, MahalanobisModel, Ridge,
};

/// Largest softmax probability of `logits / temperature`.
pub fn max_softmax(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scaled.iter().map(|&z| (z - max).exp()).sum();
    1.0 / denom
}

/// Maximum softmax probability.
pub fn score_msp(logits: &[f64]) -> f64 {
    max_softmax(logits, 1.0)
}

/// Negative free energy, `T * logsumexp(logits / T)`.
pub fn score_energy(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.iter().map(|&z| (z - max).exp()).sum();
    temperature * (max + sum.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdinConfig {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for OdinConfig {
    fn default() -> Self {
        OdinConfig {
            temperature: 1000.0,
            epsilon: 0.0,
        }
    }
}

impl OdinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("ODIN temperature must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("ODIN epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Tempered max-softmax after one signed-gradient step of size `epsilon`
/// that increases the tempered max-softmax, evaluated for every row.
pub fn score_odin_batch(net: &DenseNet, inputs: &DMatrix<f64>, cfg: &OdinConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let t = cfg.temperature;
    let trace = net.forward(inputs)?;
    let logits = if cfg.epsilon == 0.0 {
        trace.logits().clone()
    } else {
        let z = trace.logits();
        let (n, k) = z.shape();
        // Gradient of -log S(x; T) with respect to the logits: (softmax(z/T) - onehot) / T.
        let mut d_logits = DMatrix::zeros(n, k);
        for i in 0..n {
            let row: Vec<f64> = z.row(i).iter().map(|v| v / t).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let top = argmax(row.iter().copied());
            for c in 0..k {
                let onehot = if c == top { 1.0 } else { 0.0 };
                d_logits[(i, c)] = (exps[c] / sum - onehot) / t;
            }
        }
        let grads = net.backward(&trace, &d_logits, None, true)?;
        let g = grads.input.expect("input gradient was requested");
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        let perturbed = inputs.zip_map(&g, |x, gi| x - cfg.epsilon * sign(gi));
        net.logits(&perturbed)?
    };
    Ok(logits
        .row_iter()
        .map(|r| max_softmax(&r.iter().copied().collect::<Vec<_>>(), t))
        .collect())
}

/// ODIN score of a single input.
pub fn score_odin(net: &DenseNet, x: &[f64], cfg: &OdinConfig) -> Result<f64> {
    let batch = DMatrix::from_row_slice(1, x.len(), x);
    Ok(score_odin_batch(net, &batch, cfg)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScorerKind {
    Msp,
    Odin,
    Mahalanobis,
    MahalanobisEnsemble,
    Energy,
    Gram,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 6] = [
        ScorerKind::Msp,
        ScorerKind::Odin,
        ScorerKind::Mahalanobis,
        ScorerKind::MahalanobisEnsemble,
        ScorerKind::Energy,
        ScorerKind::Gram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::Msp => "msp",
            ScorerKind::Odin => "odin",
            ScorerKind::Mahalanobis => "mahalanobis",
            ScorerKind::MahalanobisEnsemble => "mahalanobis-ensemble",
            ScorerKind::Energy => "energy",
            ScorerKind::Gram => "gram",
        }
    }

    pub fn valid_names() -> String {
        ScorerKind::ALL.map(|s| s.name()).join(", ")
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown scorer '{s}' (valid: {})",
                    ScorerKind::valid_names()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub odin: OdinConfig,
    pub energy_temperature: f64,
    pub ridge: Ridge,
    pub gram_orders: Vec<u32>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            odin: OdinConfig::default(),
            energy_temperature: 1.0,
            ridge: Ridge::default(),
            gram_orders: vec![1, 2],
        }
    }
}

/// A trained net together with whatever fitted statistics the requested scorers need.
#[derive(Debug, Clone)]
pub struct Detector {
    pub net: DenseNet,
    pub config: DetectorConfig,
    pub mahalanobis: Option<MahalanobisModel>,
    pub mahalanobis_ensemble: Option<MahalanobisModel>,
    pub gram: Option<GramBounds>,
}

impl Detector {
    /// Fits the statistics needed by `kinds` on ID training data only.
    pub fn fit(
        net: &DenseNet,
        train: &LabeledDataset,
        kinds: &[ScorerKind],
        config: DetectorConfig,
    ) -> Result<Self> {
        config.odin.validate()?;
        if !(config.energy_temperature > 0.0) {
            return Err(Error::InvalidConfig("energy temperature must be positive".into()));
        }
        let needs_fit = kinds.iter().any(|k| {
            matches!(
                k,
                ScorerKind::Mahalanobis | ScorerKind::MahalanobisEnsemble | ScorerKind::Gram
            )
        });
        let mut det = Detector {
            net: net.clone(),
            config,
            mahalanobis: None,
            mahalanobis_ensemble: None,
            gram: None,
        };
        if !needs_fit {
            return Ok(det);
        }
        let k = net.num_classes();
        let trace = net.forward(&train.inputs)?;
        if kinds.contains(&ScorerKind::Mahalanobis) {
            det.mahalanobis = Some(fit_mahalanobis(
                &trace,
                &train.labels,
                k,
                &LayerSelection::Penultimate,
                det.config.ridge,
            )?);
        }
        if kinds.contains(&ScorerKind::MahalanobisEnsemble) {
            det.mahalanobis_ensemble = Some(fit_mahalanobis(
                &trace,
                &train.labels,
                k,
                &LayerSelection::AllHidden,
                det.config.ridge,
            )?);
        }
        if kinds.contains(&ScorerKind::Gram) {
            det.gram = Some(fit_gram(
                &trace,
                &train.labels,
                k,
                &LayerSelection::AllHidden,
                &det.config.gram_orders,
            )?);
        }
        Ok(det)
    }

    pub fn score(&self, kind: ScorerKind, inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
        let unfitted = || Error::InvalidConfig(format!("scorer '{kind}' was not fitted"));
        let rows = |trace: &crate::net::ForwardTrace| -> Vec<Vec<f64>> {
            trace
                .logits()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect()
        };
        match kind {
            ScorerKind::Msp => {
                let trace = self.net.forward(inputs)?;
                Ok(rows(&trace).iter().map(|l| score_msp(l)).collect())
            }
            ScorerKind::Energy => {
                let trace = self.net.forward(inputs)?;
                let t = self.config.energy_temperature;
                Ok(rows(&trace).iter().map(|l| score_energy(l, t)).collect())
            }
            ScorerKind::Odin => score_odin_batch(&self.net, inputs, &self.config.odin),
            ScorerKind::Mahalanobis => {
                let m = self.mahalanobis.as_ref().ok_or_else(unfitted)?;
                score_mahalanobis(m, &self.net.forward(inputs)?)
            }
            ScorerKind::MahalanobisEnsemble => {
                let m = self.mahalanobis_ensemble.as_ref().ok_or_else(unfitted)?;
                score_mahalanobis(m, &self.net.forward(inputs)?)
            }
            ScorerKind::Gram => {
                let g = self.gram.as_ref().ok_or_else(unfitted)?;
                score_gram(g, &self.net.forward(inputs)?)
            }
        }
    }
}
