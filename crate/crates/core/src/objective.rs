//! Training objective: soft-target binary cross-entropy on the
//! progression probability, binary cross-entropy on the ungradable
//! probability, and an `|alpha|` penalty on the per-pair slope exponent.

use crate::error::{Error, Result};
use crate::model::{sigmoid, softplus, LogitGrads, PairPrediction, N_CLASSES};
use crate::synthgen::Progression;

/// Probabilities are clamped this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Targets for one pair. `y_d` is absent for ungradable pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEncoding {
    pub y_d: Option<f64>,
    pub y_o: f64,
}

impl TargetEncoding {
    pub fn from_label(label: Progression) -> Self {
        match label {
            Progression::Worse => Self { y_d: Some(0.0), y_o: 0.0 },
            Progression::Stable => Self { y_d: Some(0.5), y_o: 0.0 },
            Progression::Better => Self { y_d: Some(1.0), y_o: 0.0 },
            Progression::Other => Self { y_d: None, y_o: 1.0 },
        }
    }

    /// Targets of the same pair with the images swapped.
    pub fn reversed(self) -> Self {
        Self {
            y_d: self.y_d.map(|y| 1.0 - y),
            y_o: self.y_o,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy with a soft target `y` in `[0, 1]`.
pub fn bce(y: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Invalid(format!("target {y} outside [0, 1]")));
    }
    let p = clamp_prob(p);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Unreduced loss terms of one pair and their gradients.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairLoss {
    pub other: f64,
    /// Zero when the pair has no progression target.
    pub disease: f64,
    pub reg: f64,
    pub logits: LogitGrads,
    pub d_alpha: f64,
}

impl PairLoss {
    pub fn total(&self) -> f64 {
        self.other + self.disease + self.reg
    }
}

/// Loss of one pair at slope exponent `alpha` (which must match the slope
/// the prediction was made with).
///
/// Evaluated from the logits rather than the probabilities so that
/// saturated predictions keep full precision; the probability clamp maps
/// to a logit clamp with identical values.
pub fn pair_loss(
    pred: &PairPrediction,
    target: &TargetEncoding,
    alpha: f64,
    lambda: f64,
) -> Result<PairLoss> {
    let mut out = PairLoss::default();
    let y = target.y_o;
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Invalid(format!("target {y} outside [0, 1]")));
    }
    // s = -ln(1 - y_o) = softplus(z_o1) + softplus(z_o2)
    let s = softplus(pred.z_o1) + softplus(pred.z_o2);
    let (s_lo, s_hi) = (-(-PROB_CLAMP).ln_1p(), -PROB_CLAMP.ln());
    let sc = s.clamp(s_lo, s_hi);
    let ln_p = (-(-sc).exp_m1()).ln();
    out.other = -y * ln_p + (1.0 - y) * sc;
    if s_lo < s && s < s_hi {
        let k = (1.0 - y) - y / s.exp_m1();
        out.logits.z_o1 = k * sigmoid(pred.z_o1);
        out.logits.z_o2 = k * sigmoid(pred.z_o2);
    }
    if let Some(y) = target.y_d {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Invalid(format!("target {y} outside [0, 1]")));
        }
        let x_max = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
        let x = pred.gamma * pred.delta;
        let xc = x.clamp(-x_max, x_max);
        out.disease = softplus(xc) - y * xc;
        if x.abs() < x_max {
            let r = sigmoid(x) - y;
            out.logits.z_d1 = pred.gamma * r;
            out.logits.z_d2 = -pred.gamma * r;
            out.d_alpha = pred.delta * r * pred.gamma * std::f64::consts::LN_2;
        }
    }
    out.reg = lambda * alpha.abs();
    out.d_alpha += lambda * sign(alpha);
    Ok(out)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One batch item: prediction, target and the slope exponent used.
#[derive(Debug, Clone, Copy)]
pub struct LossItem {
    pub prediction: PairPrediction,
    pub target: TargetEncoding,
    pub alpha: f64,
}

/// Batch means of each term plus per-pair gradients of the batch mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub other: f64,
    pub disease: f64,
    pub reg: f64,
    pub grads: Vec<PairLoss>,
}

/// Mean over the batch of `BCE_o + BCE_d·[y_d present] + λ|α|`.
pub fn total_loss(items: &[LossItem], lambda: f64) -> Result<BatchLoss> {
    if items.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = items.len() as f64;
    let mut out = BatchLoss {
        total: 0.0,
        other: 0.0,
        disease: 0.0,
        reg: 0.0,
        grads: Vec::with_capacity(items.len()),
    };
    for it in items {
        let pl = pair_loss(&it.prediction, &it.target, it.alpha, lambda)?;
        out.other += pl.other / n;
        out.disease += pl.disease / n;
        out.reg += pl.reg / n;
        out.grads.push(PairLoss {
            logits: LogitGrads {
                z_d1: pl.logits.z_d1 / n,
                z_d2: pl.logits.z_d2 / n,
                z_o1: pl.logits.z_o1 / n,
                z_o2: pl.logits.z_o2 / n,
            },
            d_alpha: pl.d_alpha / n,
            ..pl
        });
    }
    out.total = out.other + out.disease + out.reg;
    Ok(out)
}

/// Categorical cross-entropy of the baseline's four logits, with the
/// gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64; N_CLASSES], class: usize) -> (f64, [f64; N_CLASSES]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    let lse = m + sum.ln();
    let mut grad = [0.0; N_CLASSES];
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - lse).exp();
    }
    grad[class] -= 1.0;
    (lse - logits[class], grad)
}

pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut out = [0.0; N_CLASSES];
    for (o, v) in out.iter_mut().zip(e) {
        *o = v / s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(delta: f64, alpha: f64, z_o: (f64, f64)) -> PairPrediction {
        PairPrediction::from_logits(delta, z_o.0, 0.0, z_o.1, alpha)
    }

    #[test]
    fn bce_examples() {
        assert!(bce(1.0, 1.0).unwrap() < 1e-11);
        assert!((bce(0.5, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // -0.5 (ln 0.75 + ln 0.25)
        assert!((bce(0.5, 0.75).unwrap() - 0.836_988_216_785_835_8).abs() < 1e-12);
        assert!(bce(1.2, 0.5).is_err());
        assert!(bce(-0.1, 0.5).is_err());
        assert!(bce(0.0, 1.0).unwrap().is_finite());
    }

    #[test]
    fn target_encoding() {
        assert_eq!(TargetEncoding::from_label(Progression::Worse).y_d, Some(0.0));
        assert_eq!(TargetEncoding::from_label(Progression::Stable).y_d, Some(0.5));
        assert_eq!(TargetEncoding::from_label(Progression::Better).y_d, Some(1.0));
        let o = TargetEncoding::from_label(Progression::Other);
        assert_eq!((o.y_d, o.y_o), (None, 1.0));
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let items = [
            LossItem {
                prediction: pred(60.0, 0.0, (-60.0, -60.0)),
                target: TargetEncoding::from_label(Progression::Better),
                alpha: 0.0,
            },
            LossItem {
                prediction: pred(0.0, 0.0, (60.0, -60.0)),
                target: TargetEncoding::from_label(Progression::Other),
                alpha: 0.0,
            },
        ];
        assert!(total_loss(&items, 0.15).unwrap().total < 1e-10);
    }

    #[test]
    fn stable_pair_at_zero_delta_costs_ln2() {
        let items = [LossItem {
            prediction: pred(0.0, 0.0, (-60.0, -60.0)),
            target: TargetEncoding::from_label(Progression::Stable),
            alpha: 0.0,
        }];
        let l = total_loss(&items, 0.15).unwrap();
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-10);
        assert_eq!(l.grads[0].logits.z_d1, 0.0);
    }

    #[test]
    fn regularizer_only() {
        let items = [LossItem {
            prediction: pred(60.0, 2.0, (-60.0, -60.0)),
            target: TargetEncoding::from_label(Progression::Better),
            alpha: 2.0,
        }];
        let l = total_loss(&items, 0.15).unwrap();
        assert!((l.total - 0.30).abs() < 1e-10);
        assert!(total_loss(&[], 0.15).is_err());
    }

    #[test]
    fn other_pairs_skip_the_disease_term() {
        let item = LossItem {
            prediction: pred(3.0, 0.0, (0.0, 0.0)),
            target: TargetEncoding::from_label(Progression::Other),
            alpha: 0.0,
        };
        let l = total_loss(&[item], 0.0).unwrap();
        assert_eq!(l.disease, 0.0);
        assert_eq!(l.grads[0].logits.z_d1, 0.0);
        assert!((l.other - (-(0.75f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn wrong_label_has_finite_optimal_alpha() {
        // confident wrong prediction: delta = -2 for a BETTER label
        let target = TargetEncoding::from_label(Progression::Better);
        let loss_at = |alpha: f64| {
            let p = pred(-2.0, alpha, (-60.0, -60.0));
            pair_loss(&p, &target, alpha, 0.15).unwrap().total()
        };
        let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + i as f64 * 0.01).collect();
        let (best_i, _) = grid
            .iter()
            .map(|&a| loss_at(a))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        assert!(best_i > 0 && best_i < grid.len() - 1, "minimum at scan edge");
        assert!(grid[best_i] < 0.0);
        // without the penalty the loss keeps falling toward ln 2
        let p = pred(-2.0, -10.0, (-60.0, -60.0));
        let free = pair_loss(&p, &target, -10.0, 0.0).unwrap().total();
        assert!(free < loss_at(grid[best_i]));
        assert!(free > std::f64::consts::LN_2);
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let (l, g) = cross_entropy(&logits, 2);
        let h = 1e-6;
        for k in 0..4 {
            let mut lp = logits;
            let mut lm = logits;
            lp[k] += h;
            lm[k] -= h;
            let fd = (cross_entropy(&lp, 2).0 - cross_entropy(&lm, 2).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
        assert!(l > 0.0);
        assert!((softmax(&logits).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn logit_and_alpha_gradients_match_differences(
            z in prop::array::uniform4(-3.0f64..3.0),
            alpha in -2.0f64..2.0,
            class in 0usize..4,
            lambda in 0.0f64..0.5,
        ) {
            prop_assume!(alpha.abs() > 1e-3);
            let target = TargetEncoding::from_label(Progression::from_index(class).unwrap());
            let f = |z: [f64; 4], a: f64| {
                let p = PairPrediction::from_logits(z[0], z[1], z[2], z[3], a);
                pair_loss(&p, &target, a, lambda).unwrap().total()
            };
            let p = PairPrediction::from_logits(z[0], z[1], z[2], z[3], alpha);
            let g = pair_loss(&p, &target, alpha, lambda).unwrap();
            let h = 1e-6;
            let analytic = [g.logits.z_d1, g.logits.z_o1, g.logits.z_d2, g.logits.z_o2];
            for k in 0..4 {
                let mut zp = z; zp[k] += h;
                let mut zm = z; zm[k] -= h;
                let fd = (f(zp, alpha) - f(zm, alpha)) / (2.0 * h);
                prop_assert!((fd - analytic[k]).abs() < 1e-7, "k={} fd={} a={}", k, fd, analytic[k]);
            }
            let fd = (f(z, alpha + h) - f(z, alpha - h)) / (2.0 * h);
            prop_assert!((fd - g.d_alpha).abs() < 1e-7);
        }

        #[test]
        fn logit_form_agrees_with_probability_bce(
            z in prop::array::uniform4(-4.0f64..4.0), alpha in -1.0f64..1.0, class in 0usize..4,
        ) {
            let t = TargetEncoding::from_label(Progression::from_index(class).unwrap());
            let p = PairPrediction::from_logits(z[0], z[1], z[2], z[3], alpha);
            let l = pair_loss(&p, &t, alpha, 0.0).unwrap();
            let mut expected = bce(t.y_o, p.y_o).unwrap();
            if let Some(y) = t.y_d {
                expected += bce(y, p.y_d).unwrap();
            }
            prop_assert!((l.total() - expected).abs() < 1e-7 * expected.max(1.0));
        }

        #[test]
        fn swapping_images_with_mirrored_target_keeps_loss(
            a in -4.0f64..4.0, b in -4.0f64..4.0, oa in -4.0f64..4.0, ob in -4.0f64..4.0,
            alpha in -2.0f64..2.0, class in 0usize..4,
        ) {
            let t = TargetEncoding::from_label(Progression::from_index(class).unwrap());
            let fwd = PairPrediction::from_logits(a, oa, b, ob, alpha);
            let rev = PairPrediction::from_logits(b, ob, a, oa, alpha);
            let l1 = pair_loss(&fwd, &t, alpha, 0.15).unwrap().total();
            let l2 = pair_loss(&rev, &t.reversed(), alpha, 0.15).unwrap().total();
            prop_assert!((l1 - l2).abs() < 1e-12);
        }
    }
}
