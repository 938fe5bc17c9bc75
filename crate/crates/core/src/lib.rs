//! Learning a one-dimensional disease-state representation from noisy
//! ordinal progression labels on image pairs.
//!
//! The crate covers the full desk-scale pipeline: a synthetic cohort
//! generator, dataset loading and patient-wise splits, a Siamese
//! convolutional model with antisymmetric pair head and OR-merged
//! ungradable head, the training objective with per-pair learnable slope,
//! cross-validated training, and evaluation (metric suite, boundary
//! calibration, slope/label-noise report, few-shot threshold calibration).

pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
