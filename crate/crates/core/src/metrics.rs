//! Detection metrics over ID and shifted scores, with ID scores expected to be higher.
//!
//! Thresholds follow the convention "score >= τ ⇒ ID". Sweeps run over the
//! distinct observed scores; AUROC gives half credit to ties.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub id_scores: Vec<f64>,
    pub nas_scores: Vec<f64>,
}

impl ScoreSample {
    pub fn new(id_scores: Vec<f64>, nas_scores: Vec<f64>) -> Result<Self> {
        let s = ScoreSample {
            id_scores,
            nas_scores,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.id_scores.is_empty() {
            return Err(Error::Empty("ID scores"));
        }
        if self.nas_scores.is_empty() {
            return Err(Error::Empty("shifted scores"));
        }
        if self
            .id_scores
            .iter()
            .chain(&self.nas_scores)
            .any(|v| v.is_nan())
        {
            return Err(Error::InvalidConfig("scores contain NaN".into()));
        }
        Ok(())
    }

    /// Swaps the roles of the two sides.
    pub fn swapped(&self) -> ScoreSample {
        ScoreSample {
            id_scores: self.nas_scores.clone(),
            nas_scores: self.id_scores.clone(),
        }
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of entries of the ascending slice strictly below / equal to `x`.
fn count_below_equal(sorted: &[f64], x: f64) -> (usize, usize) {
    let below = sorted.partition_point(|&v| v < x);
    let upto = sorted.partition_point(|&v| v <= x);
    (below, upto - below)
}

/// Probability that a random ID score exceeds a random shifted score, ties counting ½.
pub fn auroc(s: &ScoreSample) -> Result<f64> {
    s.check()?;
    let nas = sorted(&s.nas_scores);
    let mut wins = 0.0;
    for &x in &s.id_scores {
        let (below, equal) = count_below_equal(&nas, x);
        wins += below as f64 + 0.5 * equal as f64;
    }
    Ok(wins / (s.id_scores.len() as f64 * s.nas_scores.len() as f64))
}

/// Smallest count `k` with `k / n >= target`.
fn required_count(n: usize, target: f64) -> usize {
    let mut k = ((target * n as f64).ceil() as usize).min(n);
    while k > 0 && (k - 1) as f64 / n as f64 >= target {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < target {
        k += 1;
    }
    k
}

/// True-negative rate on shifted scores at the largest threshold that keeps
/// at least `tpr_target` of the ID scores.
pub fn tnr_at_tpr(s: &ScoreSample, tpr_target: f64) -> Result<f64> {
    s.check()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "TPR target must lie in (0, 1], got {tpr_target}"
        )));
    }
    let mut id = sorted(&s.id_scores);
    id.reverse();
    let k = required_count(id.len(), tpr_target).max(1);
    let tau = id[k - 1];
    let nas = sorted(&s.nas_scores);
    let (below, _) = count_below_equal(&nas, tau);
    Ok(below as f64 / nas.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positive {
    Id,
    Nas,
}

/// Step-interpolated area under the precision-recall curve (average precision).
pub fn aupr(s: &ScoreSample, positive: Positive) -> Result<f64> {
    s.check()?;
    // (score, is_positive), with higher score meaning "more positive".
    let mut all: Vec<(f64, bool)> = match positive {
        Positive::Id => s
            .id_scores
            .iter()
            .map(|&v| (v, true))
            .chain(s.nas_scores.iter().map(|&v| (v, false)))
            .collect(),
        Positive::Nas => s
            .nas_scores
            .iter()
            .map(|&v| (-v, true))
            .chain(s.id_scores.iter().map(|&v| (-v, false)))
            .collect(),
    };
    let n_pos = all.iter().filter(|p| p.1).count() as f64;
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut last_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0.total_cmp(&v) == Ordering::Equal {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - last_recall) * precision;
        last_recall = recall;
    }
    Ok(area)
}

/// Best balanced accuracy `½·P(ID ≥ τ) + ½·P(shifted < τ)` over thresholds.
pub fn detection_accuracy(s: &ScoreSample) -> Result<f64> {
    s.check()?;
    let id = sorted(&s.id_scores);
    let nas = sorted(&s.nas_scores);
    let (n_id, n_nas) = (id.len() as f64, nas.len() as f64);
    // τ = +∞ accepts nothing.
    let mut best: f64 = 0.5;
    for &tau in id.iter().chain(&nas) {
        let id_accept = (id.len() - id.partition_point(|&v| v < tau)) as f64 / n_id;
        let nas_reject = nas.partition_point(|&v| v < tau) as f64 / n_nas;
        best = best.max(0.5 * id_accept + 0.5 * nas_reject);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Auroc,
    AuprIn,
    AuprOut,
    TnrAt95Tpr,
    DetectionAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Auroc,
        Metric::AuprIn,
        Metric::AuprOut,
        Metric::TnrAt95Tpr,
        Metric::DetectionAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::AuprIn => "aupr-in",
            Metric::AuprOut => "aupr-out",
            Metric::TnrAt95Tpr => "tnr-at-95-tpr",
            Metric::DetectionAccuracy => "detection-accuracy",
        }
    }

    pub fn evaluate(self, s: &ScoreSample) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(s),
            Metric::AuprIn => aupr(s, Positive::Id),
            Metric::AuprOut => aupr(s, Positive::Nas),
            Metric::TnrAt95Tpr => tnr_at_tpr(s, 0.95),
            Metric::DetectionAccuracy => detection_accuracy(s),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown metric '{s}' (valid: {})",
                Metric::ALL.map(|m| m.name()).join(", ")
            ))
        })
    }
}
