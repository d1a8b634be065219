//! Labeled datasets, the synthetic NAS world, and CSV I/O.

mod csv_io;
mod synth;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use csv_io::{read_csv, read_features_csv, write_csv, write_features_csv};
pub use synth::{derive_seed, gen_id, gen_nas, gen_shift_sequence, NasCategory, ShiftSequence, SynthConfig};

/// Which natural attribute was shifted, and by how much.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMeta {
    pub attribute: String,
    pub value: f64,
}

/// Inputs with 0-based class labels. Files use 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub meta: Option<ShiftMeta>,
}

impl LabeledDataset {
    pub fn new(inputs: DMatrix<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
            meta: None,
        })
    }

    pub fn with_meta(mut self, attribute: impl Into<String>, value: f64) -> Self {
        self.meta = Some(ShiftMeta {
            attribute: attribute.into(),
            value,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes.max(self.num_classes)];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.truncate(num_classes);
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.inputs.select_rows(idx.iter()),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            meta: self.meta.clone(),
        }
    }

    /// Set of distinct labels present.
    pub fn label_set(&self) -> std::collections::BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }
}
