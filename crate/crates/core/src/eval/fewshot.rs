//! Few-shot threshold calibration on a scalar score for a binary task.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::MeanStd;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    ActiveAbove,
    ActiveBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreThreshold {
    pub threshold: f64,
    pub orientation: Orientation,
    /// Balanced accuracy on the data the threshold was fitted to.
    pub fit_bal_acc: f64,
}

impl ScoreThreshold {
    pub fn predict(&self, score: f64) -> bool {
        match self.orientation {
            Orientation::ActiveAbove => score > self.threshold,
            Orientation::ActiveBelow => score < self.threshold,
        }
    }
}

/// Balanced accuracy of binary predictions.
pub fn binary_balanced_accuracy(predicted: impl IntoIterator<Item = bool>, labels: &[bool]) -> f64 {
    let (mut tp, mut tn, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (p, &l) in predicted.into_iter().zip(labels) {
        if l {
            pos += 1;
            tp += p as usize;
        } else {
            neg += 1;
            tn += (!p) as usize;
        }
    }
    let tpr = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    let tnr = if neg == 0 { 0.0 } else { tn as f64 / neg as f64 };
    (tpr + tnr) / 2.0
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Best threshold and orientation on the given scores. Candidates are the
/// midpoints between consecutive distinct scores and ±∞; ties go to the
/// candidate closest to the median score.
pub fn fit_threshold(scores: &[f64], labels: &[bool]) -> Result<ScoreThreshold> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Invalid("threshold fitting needs both classes".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let med = median(&sorted);
    sorted.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(f64::INFINITY);

    let mut best: Option<(ScoreThreshold, f64)> = None;
    for &c in &candidates {
        let dist = (c - med).abs();
        for orientation in [Orientation::ActiveAbove, Orientation::ActiveBelow] {
            let cand = ScoreThreshold {
                threshold: c,
                orientation,
                fit_bal_acc: 0.0,
            };
            let acc = binary_balanced_accuracy(scores.iter().map(|&s| cand.predict(s)), labels);
            let better = match &best {
                None => true,
                Some((b, bd)) => acc > b.fit_bal_acc || (acc == b.fit_bal_acc && dist < *bd),
            };
            if better {
                best = Some((ScoreThreshold { fit_bal_acc: acc, ..cand }, dist));
            }
        }
    }
    Ok(best.expect("at least two candidates").0)
}

/// Draws `k` indices per class without replacement.
pub fn draw_shots<R: Rng + ?Sized>(labels: &[bool], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let mut shots = Vec::with_capacity(2 * k);
    for (class, name) in [(false, "inactive"), (true, "active")] {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Invalid(format!(
                "class {name} has {} samples, fewer than k={k}",
                members.len()
            )));
        }
        shots.extend(sample(rng, members.len(), k).into_iter().map(|j| members[j]));
    }
    Ok(shots)
}

/// Draws `k` shots per class and fits a threshold on them.
pub fn fewshot_threshold<R: Rng + ?Sized>(
    scores: &[f64],
    labels: &[bool],
    k: usize,
    rng: &mut R,
) -> Result<(ScoreThreshold, Vec<usize>)> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    let shots = draw_shots(labels, k, rng)?;
    let s: Vec<f64> = shots.iter().map(|&i| scores[i]).collect();
    let l: Vec<bool> = shots.iter().map(|&i| labels[i]).collect();
    Ok((fit_threshold(&s, &l)?, shots))
}

/// L2-regularized logistic regression on standardized features, fitted by
/// full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub const L2: f64 = 1e-2;
    const STEP: f64 = 0.5;
    const ITERS: usize = 300;

    pub fn fit(features: &[&[f64]], labels: &[bool]) -> Result<Self> {
        let n = features.len();
        if n == 0 || n != labels.len() {
            return Err(Error::Invalid("logistic regression needs matching non-empty inputs".into()));
        }
        let d = features[0].len();
        let nf = n as f64;
        let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / nf).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / nf;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let x: Vec<Vec<f64>> = features
            .iter()
            .map(|f| (0..d).map(|j| (f[j] - mean[j]) / scale[j]).collect())
            .collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..Self::ITERS {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(labels) {
                let z = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = crate::model::sigmoid(z) - yi as u8 as f64;
                gb += r / nf;
                for j in 0..d {
                    gw[j] += r * xi[j] / nf;
                }
            }
            for j in 0..d {
                w[j] -= Self::STEP * (gw[j] + Self::L2 * w[j]);
            }
            b -= Self::STEP * gb;
        }
        Ok(Self {
            mean,
            scale,
            weights: w,
            bias: b,
        })
    }

    pub fn decision(&self, f: &[f64]) -> f64 {
        self.bias
            + f.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) / s * w)
                .sum::<f64>()
    }

    pub fn predict(&self, f: &[f64]) -> bool {
        self.decision(f) > 0.0
    }
}

/// What a few-shot curve calibrates.
#[derive(Debug, Clone, Copy)]
pub enum FewshotInput<'a> {
    /// A scalar score per image, calibrated by threshold search.
    Scores(&'a [f64]),
    /// A feature vector per image, calibrated by logistic regression.
    Features(&'a [Vec<f64>]),
}

impl FewshotInput<'_> {
    fn len(&self) -> usize {
        match self {
            FewshotInput::Scores(s) => s.len(),
            FewshotInput::Features(f) => f.len(),
        }
    }
}

/// Balanced accuracy on the non-shot data after calibrating on one shot draw.
pub fn fewshot_trial<R: Rng + ?Sized>(input: FewshotInput<'_>, labels: &[bool], k: usize, rng: &mut R) -> Result<f64> {
    if input.len() != labels.len() {
        return Err(Error::Invalid("inputs and labels differ in length".into()));
    }
    let shots = draw_shots(labels, k, rng)?;
    let mut is_shot = vec![false; labels.len()];
    for &i in &shots {
        is_shot[i] = true;
    }
    let rest: Vec<usize> = (0..labels.len()).filter(|&i| !is_shot[i]).collect();
    let rest_labels: Vec<bool> = rest.iter().map(|&i| labels[i]).collect();
    let shot_labels: Vec<bool> = shots.iter().map(|&i| labels[i]).collect();
    let acc = match input {
        FewshotInput::Scores(scores) => {
            let s: Vec<f64> = shots.iter().map(|&i| scores[i]).collect();
            let th = fit_threshold(&s, &shot_labels)?;
            binary_balanced_accuracy(rest.iter().map(|&i| th.predict(scores[i])), &rest_labels)
        }
        FewshotInput::Features(feats) => {
            let f: Vec<&[f64]> = shots.iter().map(|&i| feats[i].as_slice()).collect();
            let model = LogisticRegression::fit(&f, &shot_labels)?;
            binary_balanced_accuracy(rest.iter().map(|&i| model.predict(&feats[i])), &rest_labels)
        }
    };
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub k: usize,
    pub repetitions: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and standard deviation of few-shot balanced accuracy per k.
pub fn fewshot_curve<R: Rng + ?Sized>(
    model: &str,
    input: FewshotInput<'_>,
    labels: &[bool],
    ks: &[usize],
    repetitions: usize,
    rng: &mut R,
) -> Result<Vec<CurveRow>> {
    if repetitions == 0 {
        return Err(Error::Invalid("repetitions must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let accs = (0..repetitions)
            .map(|_| fewshot_trial(input, labels, k, rng))
            .collect::<Result<Vec<f64>>>()?;
        let ms = MeanStd::of(&accs)?;
        rows.push(CurveRow {
            model: model.to_string(),
            k,
            repetitions,
            mean: ms.mean,
            std: ms.std,
        });
    }
    Ok(rows)
}

pub fn write_curve<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing curve: {e}")))?;
    Ok(())
}
