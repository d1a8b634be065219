//! Machine-readable evaluation reports and their cross-seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::metrics::{Metric, ScoreSample};
use crate::scorers::{Detector, ScorerKind};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Name of the shifted set (usually its file stem).
    pub shift: String,
    pub delta: Option<f64>,
    pub scorer: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model: String,
    pub rows: Vec<EvalRow>,
}

/// A shifted evaluation set.
#[derive(Debug, Clone)]
pub struct ShiftedSet {
    pub name: String,
    pub delta: Option<f64>,
    pub inputs: DMatrix<f64>,
}

/// Scores the ID set and every shifted set, then evaluates each metric.
/// Rows are ordered by shift, then scorer, then metric, following the
/// order of the arguments.
pub fn evaluate(
    detector: &Detector,
    id_inputs: &DMatrix<f64>,
    shifted: &[ShiftedSet],
    scorers: &[ScorerKind],
    metrics: &[Metric],
) -> Result<Vec<EvalRow>> {
    let mut id_scores = Vec::with_capacity(scorers.len());
    for &s in scorers {
        id_scores.push(detector.score(s, id_inputs)?);
    }
    let mut rows = Vec::new();
    for set in shifted {
        for (si, &s) in scorers.iter().enumerate() {
            let sample = ScoreSample::new(id_scores[si].clone(), detector.score(s, &set.inputs)?)?;
            for &m in metrics {
                rows.push(EvalRow {
                    shift: set.name.clone(),
                    delta: set.delta,
                    scorer: s.name().to_string(),
                    metric: m.name().to_string(),
                    value: m.evaluate(&sample)?,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub shift: String,
    pub delta: Option<f64>,
    pub scorer: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation across reports.
    pub std: f64,
    pub n: usize,
}

type Key = (String, Option<u64>, String, String);

fn key(r: &EvalRow) -> Key {
    (
        r.shift.clone(),
        r.delta.map(f64::to_bits),
        r.scorer.clone(),
        r.metric.clone(),
    )
}

fn describe(k: &Key) -> String {
    let delta = k.1.map_or("none".to_string(), |b| f64::from_bits(b).to_string());
    format!("shift {} (delta {delta}), scorer {}, metric {}", k.0, k.2, k.3)
}

/// Mean and standard deviation of each cell across reports (e.g. seeds).
/// Every report must contain exactly the same cells.
pub fn aggregate(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    let first = reports.first().ok_or(Error::Empty("report list"))?;
    for (i, r) in reports.iter().enumerate() {
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Mismatch(format!(
                "report {i} has schema version {}, expected {SCHEMA_VERSION}",
                r.schema_version
            )));
        }
    }
    let order: Vec<Key> = first.rows.iter().map(key).collect();
    let mut cells: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for k in &order {
        cells.insert(k.clone(), Vec::new());
    }
    for (i, r) in reports.iter().enumerate() {
        let mut seen = 0;
        for row in &r.rows {
            let k = key(row);
            match cells.get_mut(&k) {
                Some(v) if v.len() == i => {
                    v.push(row.value);
                    seen += 1;
                }
                Some(_) => return Err(Error::Mismatch(format!("report {i} repeats {}", describe(&k)))),
                None => {
                    return Err(Error::Mismatch(format!(
                        "report {i} has {} which report 0 lacks",
                        describe(&k)
                    )))
                }
            }
        }
        if seen != order.len() {
            let missing = cells.iter().find(|(_, v)| v.len() == i).map(|(k, _)| describe(k));
            return Err(Error::Mismatch(format!(
                "report {i} lacks {}",
                missing.unwrap_or_default()
            )));
        }
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let v = &cells[&k];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            AggregateRow {
                shift: k.0,
                delta: k.1.map(f64::from_bits),
                scorer: k.2,
                metric: k.3,
                mean,
                std: var.sqrt(),
                n: v.len(),
            }
        })
        .collect())
}

/// Long-form table: `schema_version,shift,delta,scorer,metric,mean,std,n`.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("schema_version,shift,delta,scorer,metric,mean,std,n\n");
    for r in rows {
        let delta = r.delta.map(|d| format!("{d:?}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{SCHEMA_VERSION},{},{delta},{},{},{:?},{:?},{}",
            r.shift, r.scorer, r.metric, r.mean, r.std, r.n
        );
    }
    out
}

/// One `mean±std` table per metric with shifts as rows and scorers as columns.
pub fn metric_table(rows: &[AggregateRow], metric: &str) -> String {
    let mut scorers: Vec<&str> = Vec::new();
    let mut shifts: Vec<(&str, Option<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if !scorers.contains(&r.scorer.as_str()) {
            scorers.push(&r.scorer);
        }
        if !shifts.iter().any(|s| s.0 == r.shift) {
            shifts.push((&r.shift, r.delta));
        }
    }
    let mut out = format!("shift,delta,{}\n", scorers.join(","));
    for (shift, delta) in shifts {
        let _ = write!(out, "{shift},{}", delta.map(|d| format!("{d:?}")).unwrap_or_default());
        for s in &scorers {
            let cell = rows
                .iter()
                .find(|r| r.metric == metric && r.shift == shift && r.scorer == *s)
                .map(|r| format!("{:.4}±{:.4}", r.mean, r.std))
                .unwrap_or_default();
            let _ = write!(out, ",{cell}");
        }
        out.push('\n');
    }
    out
}

/// Plot data for one scorer/metric pair: `delta,mean,std` sorted by delta.
pub fn curve_csv(rows: &[AggregateRow], scorer: &str, metric: &str) -> String {
    let mut pts: Vec<&AggregateRow> = rows
        .iter()
        .filter(|r| r.scorer == scorer && r.metric == metric && r.delta.is_some())
        .collect();
    pts.sort_by(|a, b| a.delta.unwrap().total_cmp(&b.delta.unwrap()));
    let mut out = String::from("shift,delta,mean,std\n");
    for r in pts {
        let _ = writeln!(out, "{},{:?},{:?},{:?}", r.shift, r.delta.unwrap(), r.mean, r.std);
    }
    out
}
