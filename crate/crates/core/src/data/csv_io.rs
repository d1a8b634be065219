//! CSV files with header `<p>1,...,<p>d,label` and 1-based integer labels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::LabeledDataset;
use crate::{Error, Result};

fn header(prefix: &str, d: usize) -> String {
    let mut cols: Vec<String> = (1..=d).map(|i| format!("{prefix}{i}")).collect();
    cols.push("label".into());
    cols.join(",")
}

fn write_table(path: &Path, prefix: &str, inputs: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = header(prefix, inputs.ncols());
    body.push('\n');
    for (row, &label) in inputs.row_iter().zip(labels) {
        for v in row.iter() {
            // Debug formatting is the shortest string that parses back to the same bits.
            body.push_str(&format!("{v:?},"));
        }
        body.push_str(&format!("{}\n", label + 1));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path, prefix: &str) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = reader.records();
    let head = match records.next() {
        None => return Err(Error::NoDataRows { path: path.to_path_buf() }),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let width = head.len();
    let d = width.saturating_sub(1);
    if d == 0 || head.get(d) != Some("label") {
        return Err(parse_err(1, format!("header must end with a 'label' column, got '{}'", head.iter().collect::<Vec<_>>().join(","))));
    }
    for (i, name) in head.iter().take(d).enumerate() {
        if name != format!("{prefix}{}", i + 1) {
            return Err(parse_err(
                1,
                format!("column {} should be '{prefix}{}', found '{name}'", i + 1, i + 1),
            ));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        for (j, field) in rec.iter().take(d).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(line, format!("column {} is not a number: '{field}'", j + 1))
            })?;
            values.push(v);
        }
        let raw = rec.get(d).unwrap().trim();
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(line, format!("label is not a positive integer: '{raw}'")))?;
        if label == 0 {
            return Err(parse_err(line, "labels are 1-based; found 0".into()));
        }
        labels.push(label - 1);
    }
    if labels.is_empty() {
        return Err(Error::NoDataRows { path: path.to_path_buf() });
    }
    Ok((DMatrix::from_row_slice(labels.len(), d, &values), labels))
}

pub fn write_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_table(path.as_ref(), "x", &data.inputs, &data.labels)
}

/// Reads a dataset; the class count is the largest label seen.
pub fn read_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (inputs, labels) = read_table(path.as_ref(), "x")?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(inputs, labels, k)
}

pub fn write_features_csv(features: &DMatrix<f64>, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    write_table(path.as_ref(), "z", features, labels)
}

/// Reads penultimate features exported from any model.
pub fn read_features_csv(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    read_table(path.as_ref(), "z")
}
