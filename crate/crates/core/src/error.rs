use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("class {class} is absent from the {context}")]
    MissingClass { class: usize, context: &'static str },

    #[error("total feature variance is zero; the entropy loss is undefined")]
    ZeroVariance,

    #[error("covariance matrix is singular (use a positive ridge)")]
    SingularCovariance,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("reports disagree: {0}")]
    Mismatch(String),

    #[error("{path}: no data rows")]
    NoDataRows { path: PathBuf },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("candidate (l2={lambda_var}, l3={lambda_corr}) failed: {source}")]
    Candidate {
        lambda_var: f64,
        lambda_corr: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
