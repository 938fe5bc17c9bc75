//! Pair-level combination of per-image logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable in both tails.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Disease-progression logit difference of the first image relative to the second.
#[inline]
pub fn pair_delta(z_d1: f64, z_d2: f64) -> f64 {
    z_d1 - z_d2
}

#[inline]
pub fn gamma_of(alpha: f64) -> f64 {
    alpha.exp2()
}

/// Sigmoid of the slope-scaled difference.
pub fn progression_prob(delta: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Invalid(format!("slope must be positive, got {gamma}")));
    }
    Ok(sigmoid(gamma * delta))
}

/// Probability that at least one image is ungradable, treating the two
/// per-image probabilities as independent: `1 - σ(-z1)·σ(-z2)`.
#[inline]
pub fn other_prob(z_o1: f64, z_o2: f64) -> f64 {
    1.0 - sigmoid(-z_o1) * sigmoid(-z_o2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub z_d1: f64,
    pub z_d2: f64,
    pub z_o1: f64,
    pub z_o2: f64,
    pub delta: f64,
    pub gamma: f64,
    pub y_d: f64,
    pub y_o: f64,
}

impl PairPrediction {
    /// Combines per-image logits with the pair slope.
    pub fn from_logits(z_d1: f64, z_o1: f64, z_d2: f64, z_o2: f64, alpha: f64) -> Self {
        let delta = pair_delta(z_d1, z_d2);
        let gamma = gamma_of(alpha);
        Self {
            z_d1,
            z_d2,
            z_o1,
            z_o2,
            delta,
            gamma,
            y_d: sigmoid(gamma * delta),
            y_o: other_prob(z_o1, z_o2),
        }
    }
}
