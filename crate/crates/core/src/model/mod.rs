//! Siamese model: a shared encoder mapping each image to features, and
//! either two scalar heads (disease-state logit `z_d`, ungradable logit
//! `z_o`) or, for the baseline, a four-way classifier on concatenated pair
//! features.

mod checkpoint;
mod encoder;
mod pair;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use pair::{
    gamma_of, other_prob, pair_delta, progression_prob, sigmoid, softplus, PairPrediction,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Per-image `z_d`/`z_o` heads combined by difference and OR-merge.
    Ordinal,
    /// Four-way softmax over the concatenated pair features.
    Naive,
}

pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Heads {
    /// Affine maps `features -> scalar`, weights followed by the bias.
    Ordinal { disease: Vec<f64>, other: Vec<f64> },
    /// Row-major `4 x (2F + 1)`, bias last in each row.
    Naive { classifier: Vec<f64> },
}

/// Trainable network parameters (the per-pair slope table lives apart).
#[derive(Debug, Clone)]
pub struct ModelParams {
    encoder: Encoder,
    pub theta: Vec<f64>,
    pub heads: Heads,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.encoder.config() == other.encoder.config()
            && self.theta == other.theta
            && self.heads == other.heads
    }
}

fn affine(head: &[f64], features: &[f64]) -> f64 {
    let (w, b) = head.split_at(head.len() - 1);
    b[0] + w.iter().zip(features).map(|(a, f)| a * f).sum::<f64>()
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(kind: ModelKind, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(config)?;
        let theta = encoder.init(rng);
        let f = encoder.feature_dim();
        let bound = 1.0 / (f as f64).sqrt();
        let mut head = |n: usize, stride: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    if (i + 1) % stride == 0 {
                        0.0
                    } else {
                        rng.gen_range(-bound..bound)
                    }
                })
                .collect()
        };
        let heads = match kind {
            ModelKind::Ordinal => Heads::Ordinal {
                disease: head(f + 1, f + 1),
                other: head(f + 1, f + 1),
            },
            ModelKind::Naive => Heads::Naive {
                classifier: head(N_CLASSES * (2 * f + 1), 2 * f + 1),
            },
        };
        Ok(Self {
            encoder,
            theta,
            heads,
        })
    }

    pub fn from_parts(config: EncoderConfig, theta: Vec<f64>, heads: Heads) -> Result<Self> {
        let encoder = Encoder::new(config)?;
        if theta.len() != encoder.n_params() {
            return Err(Error::Invalid(format!(
                "encoder expects {} parameters, got {}",
                encoder.n_params(),
                theta.len()
            )));
        }
        let f = encoder.feature_dim();
        let ok = match &heads {
            Heads::Ordinal { disease, other } => disease.len() == f + 1 && other.len() == f + 1,
            Heads::Naive { classifier } => classifier.len() == N_CLASSES * (2 * f + 1),
        };
        if !ok {
            return Err(Error::Invalid("head size does not match feature_dim".into()));
        }
        Ok(Self {
            encoder,
            theta,
            heads,
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let heads = match &self.heads {
            Heads::Ordinal { disease, other } => Heads::Ordinal {
                disease: vec![0.0; disease.len()],
                other: vec![0.0; other.len()],
            },
            Heads::Naive { classifier } => Heads::Naive {
                classifier: vec![0.0; classifier.len()],
            },
        };
        Self {
            encoder: self.encoder.clone(),
            theta: vec![0.0; self.theta.len()],
            heads,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.heads {
            Heads::Ordinal { .. } => ModelKind::Ordinal,
            Heads::Naive { .. } => ModelKind::Naive,
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn n_params(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    /// Parameter vectors in a fixed order: theta, then heads.
    pub fn groups(&self) -> Vec<&Vec<f64>> {
        let mut g = vec![&self.theta];
        match &self.heads {
            Heads::Ordinal { disease, other } => {
                g.push(disease);
                g.push(other);
            }
            Heads::Naive { classifier } => g.push(classifier),
        }
        g
    }

    pub fn groups_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut g = vec![&mut self.theta];
        match &mut self.heads {
            Heads::Ordinal { disease, other } => {
                g.push(disease);
                g.push(other);
            }
            Heads::Naive { classifier } => g.push(classifier),
        }
        g
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn features(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(&self.theta, image)
    }

    /// Per-image `(z_d, z_o)`.
    pub fn encode(&self, image: &[f64]) -> Result<(f64, f64)> {
        let f = self.features(image)?;
        self.logits_from_features(&f)
    }

    pub fn logits_from_features(&self, f: &[f64]) -> Result<(f64, f64)> {
        match &self.heads {
            Heads::Ordinal { disease, other } => Ok((affine(disease, f), affine(other, f))),
            Heads::Naive { .. } => Err(Error::Invalid(
                "the naive baseline has no per-image logits".into(),
            )),
        }
    }

    /// Full pair prediction with the given slope exponent (0 at inference).
    pub fn forward_pair(&self, x1: &[f64], x2: &[f64], alpha: f64) -> Result<PairPrediction> {
        let (z_d1, z_o1) = self.encode(x1)?;
        let (z_d2, z_o2) = self.encode(x2)?;
        Ok(PairPrediction::from_logits(z_d1, z_o1, z_d2, z_o2, alpha))
    }

    pub fn ordinal_pass(&self, x1: &[f64], x2: &[f64], alpha: f64) -> Result<OrdinalPass> {
        let (f1, c1) = self.encoder.forward_cached(&self.theta, x1)?;
        let (f2, c2) = self.encoder.forward_cached(&self.theta, x2)?;
        let (z_d1, z_o1) = self.logits_from_features(&f1)?;
        let (z_d2, z_o2) = self.logits_from_features(&f2)?;
        Ok(OrdinalPass {
            prediction: PairPrediction::from_logits(z_d1, z_o1, z_d2, z_o2, alpha),
            features: [f1, f2],
            caches: [c1, c2],
        })
    }

    /// Backpropagates logit gradients of one pair into `grads`.
    pub fn ordinal_backward(&self, pass: &OrdinalPass, d: &LogitGrads, grads: &mut ModelParams) {
        let (disease, other) = match &self.heads {
            Heads::Ordinal { disease, other } => (disease, other),
            Heads::Naive { .. } => unreachable!("ordinal pass on naive model"),
        };
        let (gd, go) = match &mut grads.heads {
            Heads::Ordinal { disease, other } => (disease, other),
            Heads::Naive { .. } => unreachable!("gradient shape mismatch"),
        };
        let f = self.encoder.feature_dim();
        for (side, (dzd, dzo)) in [(d.z_d1, d.z_o1), (d.z_d2, d.z_o2)].into_iter().enumerate() {
            let feats = &pass.features[side];
            for k in 0..f {
                gd[k] += dzd * feats[k];
                go[k] += dzo * feats[k];
            }
            gd[f] += dzd;
            go[f] += dzo;
            let d_feat: Vec<f64> = (0..f).map(|k| dzd * disease[k] + dzo * other[k]).collect();
            self.encoder
                .backward(&self.theta, &pass.caches[side], &d_feat, &mut grads.theta);
        }
    }

    pub fn naive_logits_from_features(&self, f1: &[f64], f2: &[f64]) -> Result<[f64; N_CLASSES]> {
        let classifier = match &self.heads {
            Heads::Naive { classifier } => classifier,
            Heads::Ordinal { .. } => {
                return Err(Error::Invalid("not a naive baseline model".into()))
            }
        };
        let stride = f1.len() + f2.len() + 1;
        let mut out = [0.0; N_CLASSES];
        for (c, o) in out.iter_mut().enumerate() {
            let row = &classifier[c * stride..(c + 1) * stride];
            *o = row[stride - 1]
                + f1.iter()
                    .chain(f2.iter())
                    .zip(row)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        Ok(out)
    }

    pub fn naive_logits(&self, x1: &[f64], x2: &[f64]) -> Result<[f64; N_CLASSES]> {
        let f1 = self.features(x1)?;
        let f2 = self.features(x2)?;
        self.naive_logits_from_features(&f1, &f2)
    }

    pub fn naive_pass(&self, x1: &[f64], x2: &[f64]) -> Result<NaivePass> {
        let (f1, c1) = self.encoder.forward_cached(&self.theta, x1)?;
        let (f2, c2) = self.encoder.forward_cached(&self.theta, x2)?;
        let logits = self.naive_logits_from_features(&f1, &f2)?;
        Ok(NaivePass {
            logits,
            features: [f1, f2],
            caches: [c1, c2],
        })
    }

    pub fn naive_backward(&self, pass: &NaivePass, d_logits: &[f64; N_CLASSES], grads: &mut ModelParams) {
        let classifier = match &self.heads {
            Heads::Naive { classifier } => classifier,
            Heads::Ordinal { .. } => unreachable!("naive pass on ordinal model"),
        };
        let gc = match &mut grads.heads {
            Heads::Naive { classifier } => classifier,
            Heads::Ordinal { .. } => unreachable!("gradient shape mismatch"),
        };
        let f = self.encoder.feature_dim();
        let stride = 2 * f + 1;
        let mut d_feat = [vec![0.0; f], vec![0.0; f]];
        for (c, &dc) in d_logits.iter().enumerate() {
            let row = &classifier[c * stride..(c + 1) * stride];
            let grow = &mut gc[c * stride..(c + 1) * stride];
            for side in 0..2 {
                let feats = &pass.features[side];
                for k in 0..f {
                    grow[side * f + k] += dc * feats[k];
                    d_feat[side][k] += dc * row[side * f + k];
                }
            }
            grow[stride - 1] += dc;
        }
        for side in 0..2 {
            self.encoder
                .backward(&self.theta, &pass.caches[side], &d_feat[side], &mut grads.theta);
        }
    }
}

/// Forward state of one pair kept for backpropagation.
#[derive(Debug, Clone)]
pub struct OrdinalPass {
    pub prediction: PairPrediction,
    pub features: [Vec<f64>; 2],
    caches: [EncoderCache; 2],
}

#[derive(Debug, Clone)]
pub struct NaivePass {
    pub logits: [f64; N_CLASSES],
    pub features: [Vec<f64>; 2],
    caches: [EncoderCache; 2],
}

/// d(loss)/d(per-image logits) for one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogitGrads {
    pub z_d1: f64,
    pub z_d2: f64,
    pub z_o1: f64,
    pub z_o2: f64,
}

/// Learnable slope exponents, one per training pair id. Missing ids read as 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaTable {
    values: Vec<f64>,
}

impl AlphaTable {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn get(&self, pair_id: usize) -> f64 {
        self.values.get(pair_id).copied().unwrap_or(0.0)
    }

    pub fn gamma(&self, pair_id: usize) -> f64 {
        gamma_of(self.get(pair_id))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> EncoderConfig {
        EncoderConfig {
            in_height: 16,
            in_width: 16,
            channels: vec![3, 4],
            feature_dim: 6,
        }
    }

    fn image(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..256).map(|_| rng.gen()).collect()
    }

    #[test]
    fn zero_image_zero_heads_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::init(ModelKind::Ordinal, config(), &mut rng).unwrap();
        p.heads = Heads::Ordinal {
            disease: [vec![0.0; 6], vec![0.7]].concat(),
            other: [vec![0.0; 6], vec![-1.3]].concat(),
        };
        assert_eq!(p.encode(&[0.0; 256]).unwrap(), (0.7, -1.3));
    }

    #[test]
    fn same_image_same_logits_and_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(ModelKind::Ordinal, config(), &mut rng).unwrap();
        let x = image(&mut rng);
        assert_eq!(p.encode(&x).unwrap(), p.encode(&x).unwrap());
        assert_eq!(p.forward_pair(&x, &x, 0.4).unwrap().y_d, 0.5);
    }

    #[test]
    fn swapping_images_mirrors_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(ModelKind::Ordinal, config(), &mut rng).unwrap();
        let a = image(&mut rng);
        let b = image(&mut rng);
        let ab = p.forward_pair(&a, &b, -0.3).unwrap();
        let ba = p.forward_pair(&b, &a, -0.3).unwrap();
        assert!((ab.y_d + ba.y_d - 1.0).abs() < 1e-12);
        assert_eq!(ab.y_o, ba.y_o);
        assert_eq!(ab.delta, -ba.delta);
    }

    #[test]
    fn encode_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(ModelKind::Ordinal, config(), &mut rng).unwrap();
        let x = image(&mut rng);
        let (_, cache) = p.encoder().forward_cached(&p.theta, &x).unwrap();
        let disease = match &p.heads {
            Heads::Ordinal { disease, .. } => disease[..6].to_vec(),
            _ => unreachable!(),
        };
        let mut grad = vec![0.0; p.theta.len()];
        p.encoder().backward(&p.theta, &cache, &disease, &mut grad);
        let h = 1e-3;
        let mut checked = 0;
        for _ in 0..40 {
            let i = rng.gen_range(0..p.theta.len());
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.theta[i] += h;
            minus.theta[i] -= h;
            let fd = (plus.encode(&x).unwrap().0 - minus.encode(&x).unwrap().0) / (2.0 * h);
            if fd.abs().max(grad[i].abs()) < 1e-6 {
                continue;
            }
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs());
            assert!(rel < 1e-4, "theta[{i}] fd={fd} analytic={}", grad[i]);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn alpha_table_defaults_to_zero() {
        let t = AlphaTable::from_values(vec![1.0, -1.0]);
        assert_eq!(t.gamma(0), 2.0);
        assert_eq!(t.gamma(1), 0.5);
        assert_eq!(t.get(99), 0.0);
        assert_eq!(t.gamma(99), 1.0);
    }

    #[test]
    fn from_parts_checks_shapes() {
        let enc = Encoder::new(config()).unwrap();
        let theta = vec![0.0; enc.n_params()];
        let bad = Heads::Ordinal {
            disease: vec![0.0; 3],
            other: vec![0.0; 7],
        };
        assert!(ModelParams::from_parts(config(), theta.clone(), bad).is_err());
        let ok = Heads::Naive {
            classifier: vec![0.0; 4 * 13],
        };
        let m = ModelParams::from_parts(config(), theta, ok).unwrap();
        assert_eq!(m.kind(), ModelKind::Naive);
        assert!(m.encode(&[0.0; 256]).is_err());
    }
}
