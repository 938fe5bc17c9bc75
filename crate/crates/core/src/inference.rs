//! Batch inference helpers shared by training, evaluation and the CLI.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{ModelKind, ModelParams, PairPrediction, N_CLASSES};
use crate::objective::softmax;
use crate::pipeline::{resize_only, AugmentParams};
use crate::raster::Raster;
use crate::synthgen::Progression;

/// Evaluation-time model input: plain resize to the network size, scaled to [0, 1].
pub fn prepare(image: &Raster, augment: &AugmentParams) -> Vec<f64> {
    resize_only(image, augment).to_unit()
}

/// A dataset pair ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    /// Position in the dataset.
    pub index: usize,
    pub pair_id: usize,
    pub label: Progression,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl PreparedPair {
    pub fn swapped(&self) -> Self {
        Self {
            label: self.label.reversed(),
            x1: self.x2.clone(),
            x2: self.x1.clone(),
            ..self.clone()
        }
    }
}

/// Model output for one pair, in a form both model kinds can provide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairOutput {
    Ordinal(PairPrediction),
    /// Softmax over (WORSE, STABLE, BETTER, OTHER).
    Naive([f64; N_CLASSES]),
}

impl PairOutput {
    pub fn ordinal(&self) -> Option<&PairPrediction> {
        match self {
            PairOutput::Ordinal(p) => Some(p),
            PairOutput::Naive(_) => None,
        }
    }
}

/// Predictions at slope 1, evaluated in parallel; output order follows input.
pub fn predict_pairs(params: &ModelParams, pairs: &[PreparedPair]) -> Result<Vec<PairOutput>> {
    pairs
        .par_iter()
        .map(|p| match params.kind() {
            ModelKind::Ordinal => Ok(PairOutput::Ordinal(params.forward_pair(&p.x1, &p.x2, 0.0)?)),
            ModelKind::Naive => Ok(PairOutput::Naive(softmax(&params.naive_logits(&p.x1, &p.x2)?))),
        })
        .collect()
}

/// Per-image disease-state logits.
pub fn image_logits(params: &ModelParams, images: &[Vec<f64>]) -> Result<Vec<f64>> {
    images
        .par_iter()
        .map(|x| params.encode(x).map(|(z_d, _)| z_d))
        .collect()
}

/// Per-image penultimate features.
pub fn image_features(params: &ModelParams, images: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    images.par_iter().map(|x| params.features(x)).collect()
}
