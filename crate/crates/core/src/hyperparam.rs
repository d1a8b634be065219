//! Selection of the entropy-loss weights without any shifted data.
//!
//! Every grid candidate is trained with the full loss. Candidates are ranked
//! by the harmonic mean of their raw (unweighted) variance and correlation
//! terms on the ID training set, and the first one in that order is accepted
//! when (a) the sum of its penultimate singular values beyond the two
//! largest strictly exceeds that of a CE + distance reference model and
//! (b) its ID accuracy is at most `accuracy_floor` below a CE-only model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::losses::{entropy_terms, LossConfig};
use crate::net::DenseNet;
use crate::{Error, Result};

/// Default tolerated accuracy drop versus the CE-only model.
pub const DEFAULT_ACCURACY_FLOOR: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lambda_var: Vec<f64>,
    pub lambda_corr: Vec<f64>,
    pub w_dist: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            lambda_var: vec![0.01, 0.1, 1.0, 10.0],
            lambda_corr: vec![0.0001, 0.001, 0.01, 0.1, 1.0],
            w_dist: 0.1,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_var.is_empty() || self.lambda_corr.is_empty() {
            return Err(Error::InvalidConfig("sweep grid lists must be non-empty".into()));
        }
        if let Some(v) = self
            .lambda_var
            .iter()
            .chain(&self.lambda_corr)
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidConfig(format!("grid values must be positive, got {v}")));
        }
        if !(self.w_dist >= 0.0 && self.w_dist.is_finite()) {
            return Err(Error::InvalidConfig("w_dist must be nonnegative".into()));
        }
        Ok(())
    }

    /// Candidates in row-major grid order (variance weight outermost).
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        self.lambda_var
            .iter()
            .flat_map(|&a| self.lambda_corr.iter().map(move |&b| (a, b)))
            .collect()
    }

    pub fn loss_config(&self, lambda_var: f64, lambda_corr: f64) -> LossConfig {
        LossConfig::full(self.w_dist, lambda_var, lambda_corr)
    }
}

/// Sum of the singular values of `features` beyond the two largest.
pub fn residual_singular_mass(features: &DMatrix<f64>) -> f64 {
    if features.nrows() == 0 || features.ncols() == 0 {
        return 0.0;
    }
    let mut sv: Vec<f64> = features.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.iter().skip(2).sum()
}

pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "harmonic mean needs positive finite inputs, got {a} and {b}"
        )));
    }
    Ok(2.0 * a * b / (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    RejectedResidualMass,
    RejectedAccuracy,
    RejectedBoth,
    /// Ranked after the accepted candidate.
    NotExamined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda_var: f64,
    pub lambda_corr: f64,
    pub raw_variance: f64,
    pub raw_correlation: f64,
    pub harmonic_mean: f64,
    pub residual_mass: f64,
    pub accuracy: f64,
    pub verdict: Verdict,
}

/// Statistics of the two reference models every candidate is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepReference {
    pub ce_accuracy: f64,
    pub ce_residual_mass: f64,
    pub ce_dist_accuracy: f64,
    pub ce_dist_residual_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// `(lambda_var, lambda_corr)` of the accepted candidate, if any.
    pub accepted: Option<(f64, f64)>,
    pub reference: SweepReference,
    pub accuracy_floor: f64,
    /// Sorted by harmonic mean, ascending.
    pub trail: Vec<SweepRecord>,
}

impl SweepOutcome {
    pub fn accepted_record(&self) -> Option<&SweepRecord> {
        self.trail.iter().find(|r| r.verdict == Verdict::Accepted)
    }
}

fn penultimate(net: &DenseNet, data: &LabeledDataset) -> Result<DMatrix<f64>> {
    let trace = net.forward(&data.inputs)?;
    Ok(trace.penultimate().clone())
}

/// Trains and measures the CE-only and CE + distance reference models.
pub fn reference_stats<F>(
    grid: &SweepGrid,
    train: &LabeledDataset,
    eval: &LabeledDataset,
    train_fn: &F,
) -> Result<SweepReference>
where
    F: Fn(&LossConfig) -> Result<DenseNet>,
{
    let ce = train_fn(&LossConfig::ce_only())?;
    let ce_dist = train_fn(&LossConfig::ce_dist(grid.w_dist))?;
    Ok(SweepReference {
        ce_accuracy: ce.accuracy(&eval.inputs, &eval.labels)?,
        ce_residual_mass: residual_singular_mass(&penultimate(&ce, train)?),
        ce_dist_accuracy: ce_dist.accuracy(&eval.inputs, &eval.labels)?,
        ce_dist_residual_mass: residual_singular_mass(&penultimate(&ce_dist, train)?),
    })
}

/// Trains one candidate and records its raw terms, residual mass and accuracy.
/// The verdict is left as [`Verdict::NotExamined`] until ranking.
pub fn evaluate_candidate<F>(
    grid: &SweepGrid,
    lambda_var: f64,
    lambda_corr: f64,
    train: &LabeledDataset,
    eval: &LabeledDataset,
    train_fn: &F,
) -> Result<SweepRecord>
where
    F: Fn(&LossConfig) -> Result<DenseNet>,
{
    let wrap = |e: Error| Error::Candidate {
        lambda_var,
        lambda_corr,
        source: Box::new(e),
    };
    let net = train_fn(&grid.loss_config(lambda_var, lambda_corr)).map_err(wrap)?;
    let z = penultimate(&net, train).map_err(wrap)?;
    let terms = entropy_terms(&z).map_err(wrap)?;
    Ok(SweepRecord {
        lambda_var,
        lambda_corr,
        raw_variance: terms.variance,
        raw_correlation: terms.correlation,
        harmonic_mean: harmonic_mean(terms.variance, terms.correlation).map_err(wrap)?,
        residual_mass: residual_singular_mass(&z),
        accuracy: net.accuracy(&eval.inputs, &eval.labels).map_err(wrap)?,
        verdict: Verdict::NotExamined,
    })
}

/// Orders candidates by harmonic mean and assigns verdicts.
pub fn rank_and_select(
    reference: SweepReference,
    mut records: Vec<SweepRecord>,
    accuracy_floor: f64,
) -> SweepOutcome {
    records.sort_by(|a, b| a.harmonic_mean.total_cmp(&b.harmonic_mean));
    let mut accepted = None;
    for r in &mut records {
        if accepted.is_some() {
            r.verdict = Verdict::NotExamined;
            continue;
        }
        let mass_ok = r.residual_mass > reference.ce_dist_residual_mass;
        let acc_ok = r.accuracy >= reference.ce_accuracy - accuracy_floor;
        r.verdict = match (mass_ok, acc_ok) {
            (true, true) => {
                accepted = Some((r.lambda_var, r.lambda_corr));
                Verdict::Accepted
            }
            (false, true) => Verdict::RejectedResidualMass,
            (true, false) => Verdict::RejectedAccuracy,
            (false, false) => Verdict::RejectedBoth,
        };
    }
    SweepOutcome {
        accepted,
        reference,
        accuracy_floor,
        trail: records,
    }
}

/// Runs the whole procedure sequentially; `on_record` sees each candidate as it completes.
pub fn select_hyperparams<F>(
    grid: &SweepGrid,
    train: &LabeledDataset,
    eval: &LabeledDataset,
    train_fn: F,
    accuracy_floor: f64,
    mut on_record: impl FnMut(&SweepRecord),
) -> Result<SweepOutcome>
where
    F: Fn(&LossConfig) -> Result<DenseNet>,
{
    grid.validate()?;
    if !(accuracy_floor.is_finite()) {
        return Err(Error::InvalidConfig("accuracy floor must be finite".into()));
    }
    let reference = reference_stats(grid, train, eval, &train_fn)?;
    let mut records = Vec::new();
    for (lv, lc) in grid.candidates() {
        let r = evaluate_candidate(grid, lv, lc, train, eval, &train_fn)?;
        on_record(&r);
        records.push(r);
    }
    Ok(rank_and_select(reference, records, accuracy_floor))
}
