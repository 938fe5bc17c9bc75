//! Adam with decoupled weight decay for network weights, and a lazily
//! updated Adam (no decay) for the per-pair slope table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, cfg: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            lr,
            weight_decay,
            cfg,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update over parameter groups paired with their gradients.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[gi];
            let v = &mut self.v[gi];
            for i in 0..p.len() {
                let gr = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gr;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gr * gr;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * decay - self.lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Adam over a table where each step touches only a few entries. Moments
/// and bias-correction counters are kept per entry and advance only when
/// the entry receives a gradient.
#[derive(Debug, Clone)]
pub struct SparseAdam {
    pub lr: f64,
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<u32>,
}

impl SparseAdam {
    pub fn new(lr: f64, cfg: AdamConfig, n: usize) -> Self {
        Self {
            lr,
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: vec![0; n],
        }
    }

    /// `grads` may list an index more than once; contributions are summed.
    pub fn step(&mut self, values: &mut [f64], grads: &[(usize, f64)]) {
        let mut merged: Vec<(usize, f64)> = grads.to_vec();
        merged.sort_by_key(|&(i, _)| i);
        merged.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for (i, g) in merged {
            self.t[i] += 1;
            let t = self.t[i] as i32;
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / (1.0 - beta1.powi(t));
            let vhat = self.v[i] / (1.0 - beta2.powi(t));
            values[i] -= self.lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
