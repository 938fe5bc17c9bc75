//! Turning pair probabilities into 4-class decisions.

use serde::{Deserialize, Serialize};

use super::metrics::{metric_suite, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::model::N_CLASSES;
use crate::synthgen::Progression;

pub const BOUNDARY_STEP: f64 = 0.005;
pub const BOUNDARY_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    /// Half-width of the STABLE band around 0.5.
    pub t: f64,
    pub t_o: f64,
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        Self { t: 0.0, t_o: 0.5 }
    }
}

impl DecisionThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.t) || !(self.t_o > 0.0 && self.t_o < 1.0) {
            return Err(Error::Invalid(format!("invalid decision thresholds {self:?}")));
        }
        Ok(())
    }
}

/// OTHER takes precedence over the progression classes.
pub fn classify_pair(y_d: f64, y_o: f64, th: &DecisionThresholds) -> Progression {
    if y_o > th.t_o {
        Progression::Other
    } else if y_d < 0.5 - th.t {
        Progression::Worse
    } else if y_d > 0.5 + th.t {
        Progression::Better
    } else {
        Progression::Stable
    }
}

pub fn confusion(y_d: &[f64], y_o: &[f64], labels: &[Progression], th: &DecisionThresholds) -> ConfusionMatrix {
    ConfusionMatrix::from_labels(
        N_CLASSES,
        y_d.iter()
            .zip(y_o)
            .zip(labels)
            .map(|((&d, &o), l)| (l.index(), classify_pair(d, o, th).index())),
    )
}

/// Macro F1 over the classes that occur as truth or prediction.
pub fn macro_f1_present(cm: &ConfusionMatrix) -> Result<f64> {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let present: Vec<usize> = (0..cm.k()).filter(|&c| rows[c] + cols[c] > 0).collect();
    Ok(metric_suite(&cm.restrict(&present))?.f1)
}

/// Grid search of the STABLE half-width maximizing macro F1; `t_o` stays 0.5.
pub fn calibrate_boundary(y_d: &[f64], y_o: &[f64], labels: &[Progression]) -> Result<DecisionThresholds> {
    if y_d.is_empty() {
        return Err(Error::Invalid("empty validation set for boundary calibration".into()));
    }
    if y_d.len() != y_o.len() || y_d.len() != labels.len() {
        return Err(Error::Invalid("calibration inputs differ in length".into()));
    }
    let mut best = DecisionThresholds::default();
    let mut best_f1 = f64::NEG_INFINITY;
    for i in 0..BOUNDARY_STEPS {
        let th = DecisionThresholds {
            t: i as f64 * BOUNDARY_STEP,
            t_o: 0.5,
        };
        let f1 = macro_f1_present(&confusion(y_d, y_o, labels, &th))?;
        if f1 > best_f1 {
            best_f1 = f1;
            best = th;
        }
    }
    Ok(best)
}
