//! Evaluation: decision rule and boundary calibration, metrics, per-pair
//! exports, slope reports and few-shot calibration.

pub mod decision;
pub mod fewshot;
pub mod metrics;
pub mod reports;
pub mod stats;

pub use decision::{calibrate_boundary, classify_pair, confusion, macro_f1_present, DecisionThresholds};
pub use fewshot::{
    fewshot_curve, fewshot_threshold, fit_threshold, CurveRow, FewshotInput, LogisticRegression, Orientation,
    ScoreThreshold,
};
pub use metrics::{metric_suite, rk_correlation, ConfusionMatrix, MeanStd, MetricSuite};
pub use reports::{delta_scatter, gamma_adjacency_report, GammaReport, ScatterRow, Transition};
pub use stats::{mann_whitney_less, spearman, spearman_permutation_p};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PairOutput;
use crate::model::{PairPrediction, N_CLASSES};
use crate::synthgen::Progression;

/// Output of a predictor that knows the labels: progression probability
/// 0, 0.5 or 1 and OTHER probability 0 or 1.
pub fn oracle_output(label: Progression) -> PairOutput {
    let (y_d, y_o) = match label {
        Progression::Worse => (0.0, 0.0),
        Progression::Stable => (0.5, 0.0),
        Progression::Better => (1.0, 0.0),
        Progression::Other => (0.5, 1.0),
    };
    PairOutput::Ordinal(PairPrediction {
        z_d1: 0.0,
        z_d2: 0.0,
        z_o1: 0.0,
        z_o2: 0.0,
        delta: 0.0,
        gamma: 1.0,
        y_d,
        y_o,
    })
}

fn ordinal_columns(outputs: &[PairOutput]) -> Option<(Vec<f64>, Vec<f64>)> {
    outputs
        .iter()
        .map(|o| o.ordinal().map(|p| (p.y_d, p.y_o)))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn argmax(p: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for i in 1..N_CLASSES {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    /// Calibrated boundary; absent for the softmax baseline, which predicts by argmax.
    pub thresholds: Option<DecisionThresholds>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSuite,
}

/// Calibrates on validation outputs and scores the 4-class decision on test outputs.
pub fn evaluate_split(
    val: &[PairOutput],
    val_labels: &[Progression],
    test: &[PairOutput],
    test_labels: &[Progression],
) -> Result<SplitEvaluation> {
    if val.len() != val_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Invalid("outputs and labels differ in length".into()));
    }
    let (thresholds, cm) = match (ordinal_columns(val), ordinal_columns(test)) {
        (Some((vd, vo)), Some((td, to))) => {
            let th = calibrate_boundary(&vd, &vo, val_labels)?;
            (Some(th), confusion(&td, &to, test_labels, &th))
        }
        (None, None) => {
            let cm = ConfusionMatrix::from_labels(
                N_CLASSES,
                test.iter().zip(test_labels).map(|(o, l)| match o {
                    PairOutput::Naive(p) => (l.index(), argmax(p)),
                    PairOutput::Ordinal(_) => unreachable!("checked above"),
                }),
            );
            (None, cm)
        }
        _ => return Err(Error::Invalid("mixed model kinds in one evaluation".into())),
    };
    let metrics = metric_suite(&cm)?;
    Ok(SplitEvaluation {
        thresholds,
        confusion: cm,
        metrics,
    })
}

/// Balanced accuracy over WORSE/STABLE/BETTER after calibrating the band on
/// validation pairs; OTHER pairs are left out and the OTHER head ignored.
pub fn three_class_balanced_accuracy(
    val_y_d: &[f64],
    val_labels: &[Progression],
    test_y_d: &[f64],
    test_labels: &[Progression],
) -> Result<(DecisionThresholds, f64)> {
    let keep = |y: &[f64], l: &[Progression]| -> (Vec<f64>, Vec<Progression>) {
        y.iter()
            .zip(l)
            .filter(|(_, l)| l.is_progression() || **l == Progression::Stable)
            .map(|(&y, &l)| (y, l))
            .unzip()
    };
    let (vd, vl) = keep(val_y_d, val_labels);
    let (td, tl) = keep(test_y_d, test_labels);
    let th = calibrate_boundary(&vd, &vec![0.0; vd.len()], &vl)?;
    let cm = confusion(&td, &vec![0.0; td.len()], &tl, &th).restrict(&[0, 1, 2]);
    Ok((th, metric_suite(&cm)?.bal_acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Progression::*;

    #[test]
    fn oracle_scores_perfectly() {
        let labels = vec![Worse, Stable, Better, Other, Stable, Worse, Better, Other];
        let outs: Vec<PairOutput> = labels.iter().map(|&l| oracle_output(l)).collect();
        let e = evaluate_split(&outs, &labels, &outs, &labels).unwrap();
        for v in e.metrics.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_outputs_use_argmax() {
        let labels = vec![Worse, Other];
        let outs = vec![
            PairOutput::Naive([0.7, 0.1, 0.1, 0.1]),
            PairOutput::Naive([0.1, 0.1, 0.1, 0.7]),
        ];
        let e = evaluate_split(&outs, &labels, &outs, &labels).unwrap();
        assert!(e.thresholds.is_none());
        assert_eq!(e.confusion.trace(), 2);
    }

    #[test]
    fn three_class_drops_other() {
        let val = [0.1, 0.5, 0.9, 0.5];
        let labels = [Worse, Stable, Better, Other];
        let (_, acc) = three_class_balanced_accuracy(&val, &labels, &val, &labels).unwrap();
        assert_eq!(acc, 1.0);
    }
}
