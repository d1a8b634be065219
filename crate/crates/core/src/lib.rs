//! Detection of natural attribute-based distribution shift.
//!
//! The crate covers the whole pipeline on a desk-scale problem:
//!
//! - [`net`]: a dense ReLU classifier with explicit forward/backward passes;
//! - [`losses`]: cross-entropy plus the class-mean distance loss and the
//!   variance/correlation entropy loss that counteract feature collapse;
//! - [`train`]: deterministic Adam training over stratified mini-batches;
//! - [`scorers`]: MSP, ODIN, Mahalanobis (penultimate and all-layer),
//!   energy and gram-deviation ID scores;
//! - [`metrics`]: AUROC, AUPR-In/Out, TNR at 95% TPR, detection accuracy;
//! - [`data`]: the synthetic three-class world and its three shift categories;
//! - [`hyperparam`]: selection of the entropy-loss weights from ID data only;
//! - [`analysis`]: PCA, confidence curves and score landscapes;
//! - [`report`]: JSON/CSV report schemas shared with the command-line tool.
//!
//! Labels are 0-based in memory and 1-based in files.

pub mod analysis;
pub mod container;
pub mod data;
mod error;
pub mod hyperparam;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod report;
pub mod scorers;
pub mod train;

pub use error::{Error, Result};
