//! Confusion matrices and the multiclass metric suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Invalid("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    /// Builds a matrix from (true, predicted) class indices.
    pub fn from_labels(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new(k);
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        assert!(truth < self.k && predicted < self.k, "class index out of range");
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.k).map(|i| (0..self.k).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k).map(|j| (0..self.k).map(|i| self.get(i, j)).sum()).collect()
    }

    /// Same counts under the class relabelling `old -> perm[old]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::new(self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                out.counts[perm[i] * self.k + perm[j]] = self.get(i, j);
            }
        }
        out
    }

    /// Sub-matrix over the listed classes; pairs involving other classes are dropped.
    pub fn restrict(&self, classes: &[usize]) -> Self {
        let mut out = Self::new(classes.len());
        for (a, &i) in classes.iter().enumerate() {
            for (b, &j) in classes.iter().enumerate() {
                out.counts[a * classes.len() + b] = self.get(i, j);
            }
        }
        out
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.k == 0 || self.total() == 0 {
            return Err(Error::Invalid("empty confusion matrix".into()));
        }
        Ok(())
    }
}

/// Gorodkin's K-category correlation coefficient. Returns 0 when either
/// denominator factor vanishes.
pub fn rk_correlation(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let t = cm.row_sums();
    let p = cm.col_sums();
    let tp: f64 = t.iter().zip(&p).map(|(&a, &b)| a as f64 * b as f64).sum();
    let pp: f64 = p.iter().map(|&x| (x as f64).powi(2)).sum();
    let tt: f64 = t.iter().map(|&x| (x as f64).powi(2)).sum();
    let d1 = s * s - pp;
    let d2 = s * s - tt;
    if d1 == 0.0 || d2 == 0.0 {
        return Ok(0.0);
    }
    Ok(((c * s - tp) / (d1.sqrt() * d2.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSuite {
    pub f1: f64,
    pub rk: f64,
    pub specificity: f64,
    pub bal_acc: f64,
    pub precision: f64,
    pub recall: f64,
    /// Per-class statistics that had a zero denominator and were counted as 0.
    pub undefined: Vec<String>,
}

impl MetricSuite {
    pub const COLUMNS: [&'static str; 6] = ["f1", "rk", "specificity", "bal_acc", "precision", "recall"];

    pub fn values(&self) -> [f64; 6] {
        [self.f1, self.rk, self.specificity, self.bal_acc, self.precision, self.recall]
    }
}

fn ratio(num: u64, den: u64, what: &str, class: usize, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(format!("{what}[{class}]"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged one-vs-rest statistics plus Rk.
pub fn metric_suite(cm: &ConfusionMatrix) -> Result<MetricSuite> {
    cm.check_nonempty()?;
    let k = cm.k();
    let total = cm.total();
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let mut undefined = Vec::new();
    let (mut f1, mut spec, mut prec, mut rec) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm.get(c, c);
        let fn_ = rows[c] - tp;
        let fp = cols[c] - tp;
        let tn = total - tp - fn_ - fp;
        prec += ratio(tp, tp + fp, "precision", c, &mut undefined);
        rec += ratio(tp, tp + fn_, "recall", c, &mut undefined);
        spec += ratio(tn, tn + fp, "specificity", c, &mut undefined);
        f1 += ratio(2 * tp, 2 * tp + fp + fn_, "f1", c, &mut undefined);
    }
    let kf = k as f64;
    Ok(MetricSuite {
        f1: f1 / kf,
        rk: rk_correlation(cm)?,
        specificity: spec / kf,
        bal_acc: rec / kf,
        precision: prec / kf,
        recall: rec / kf,
        undefined,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("mean of empty sample".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(k: usize, n: u64) -> ConfusionMatrix {
        ConfusionMatrix::from_labels(k, (0..k).flat_map(|c| std::iter::repeat((c, c)).take(n as usize)))
    }

    #[test]
    fn perfect_predictions_score_one() {
        let m = metric_suite(&diag(4, 5)).unwrap();
        for v in m.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn single_predicted_class_has_zero_rk() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![7, 0, 0], vec![2, 0, 0]]).unwrap();
        assert_eq!(rk_correlation(&cm).unwrap(), 0.0);
    }

    #[test]
    fn all_predicted_negative_binary() {
        let cm = ConfusionMatrix::from_rows(&[vec![50, 0], vec![50, 0]]).unwrap();
        let m = metric_suite(&cm).unwrap();
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.specificity, 0.5);
        assert_eq!(m.bal_acc, 0.5);
        assert_eq!(m.undefined, vec!["precision[1]".to_string()]);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(rk_correlation(&ConfusionMatrix::new(3)).is_err());
        assert!(metric_suite(&ConfusionMatrix::new(0)).is_err());
    }

    #[test]
    fn permutation_leaves_metrics_unchanged() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![4, 1, 0, 2],
            vec![0, 9, 3, 1],
            vec![1, 0, 6, 0],
            vec![2, 2, 0, 5],
        ])
        .unwrap();
        let a = metric_suite(&cm).unwrap();
        let b = metric_suite(&cm.permuted(&[2, 0, 3, 1])).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn restrict_keeps_selected_block() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]).unwrap();
        let r = cm.restrict(&[0, 2]);
        assert_eq!(r, ConfusionMatrix::from_rows(&[vec![1, 3], vec![7, 9]]).unwrap());
    }

    #[test]
    fn mean_std_is_population() {
        let m = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
    }
}
