//! Compact convolutional encoder with explicit forward and backward passes.
//!
//! Layout per block: 3x3 convolution (zero "same" padding) + bias, SiLU,
//! 2x2 average pooling (odd trailing rows/columns dropped). After the last
//! block: global average pooling and one dense SiLU layer producing the
//! feature vector. All activations are smooth so finite-difference checks
//! stay well conditioned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_height: usize,
    pub in_width: usize,
    pub channels: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_height: 16,
            in_width: 32,
            channels: vec![8, 16, 16],
            feature_dim: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.feature_dim == 0 {
            return Err(Error::Config(
                "encoder needs at least one block and nonzero widths".into(),
            ));
        }
        let shrink = 1usize << self.channels.len();
        if self.in_height < shrink || self.in_width < shrink {
            return Err(Error::Config(format!(
                "input {}x{} too small for {} pooling stages",
                self.in_width,
                self.in_height,
                self.channels.len()
            )));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Copy)]
struct Block {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl Block {
    fn pooled(&self) -> (usize, usize) {
        (self.h / 2, self.w / 2)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input of each block, `cin * h * w`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each block, `cout * h * w`.
    pre: Vec<Vec<f64>>,
    pooled_last: Vec<f64>,
    gap: Vec<f64>,
    dense_pre: Vec<f64>,
}

/// Shape bookkeeping for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    blocks: Vec<Block>,
    dense_weight_offset: usize,
    dense_bias_offset: usize,
    n_params: usize,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let (mut h, mut w) = (config.in_height, config.in_width);
        let mut cin = 1;
        let mut offset = 0;
        for &cout in &config.channels {
            let weight_offset = offset;
            offset += cout * cin * 9;
            let bias_offset = offset;
            offset += cout;
            blocks.push(Block {
                cin,
                cout,
                h,
                w,
                weight_offset,
                bias_offset,
            });
            h /= 2;
            w /= 2;
            cin = cout;
        }
        let dense_weight_offset = offset;
        offset += config.feature_dim * cin;
        let dense_bias_offset = offset;
        offset += config.feature_dim;
        Ok(Self {
            config,
            blocks,
            dense_weight_offset,
            dense_bias_offset,
            n_params: offset,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn input_len(&self) -> usize {
        self.config.in_height * self.config.in_width
    }

    fn last_channels(&self) -> usize {
        self.blocks.last().map(|b| b.cout).unwrap_or(1)
    }

    /// Uniform fan-in scaled initialization, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params];
        for b in &self.blocks {
            let bound = (6.0 / (b.cin * 9) as f64).sqrt();
            for v in &mut theta[b.weight_offset..b.bias_offset] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        let bound = (6.0 / self.last_channels() as f64).sqrt();
        for v in &mut theta[self.dense_weight_offset..self.dense_bias_offset] {
            *v = rng.gen_range(-bound..bound);
        }
        theta
    }

    fn check(&self, theta: &[f64], input: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::Invalid(format!(
                "encoder expects {} parameters, got {}",
                self.n_params,
                theta.len()
            )));
        }
        if input.len() != self.input_len() {
            return Err(Error::Invalid(format!(
                "encoder expects {}x{} input, got {} values",
                self.config.in_width,
                self.config.in_height,
                input.len()
            )));
        }
        Ok(())
    }

    /// Forward pass returning the feature vector.
    pub fn forward(&self, theta: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(theta, input)?.0)
    }

    pub fn forward_cached(&self, theta: &[f64], input: &[f64]) -> Result<(Vec<f64>, EncoderCache)> {
        self.check(theta, input)?;
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut pre = Vec::with_capacity(self.blocks.len());
        let mut x = input.to_vec();
        for b in &self.blocks {
            let a = conv_forward(b, theta, &x);
            let act: Vec<f64> = a.iter().map(|&v| silu(v)).collect();
            let pooled = avg_pool(&act, b.cout, b.h, b.w);
            inputs.push(x);
            pre.push(a);
            x = pooled;
        }
        let last = self.blocks.last().expect("validated non-empty");
        let (ph, pw) = last.pooled();
        let area = (ph * pw) as f64;
        let gap: Vec<f64> = x
            .chunks(ph * pw)
            .map(|c| c.iter().sum::<f64>() / area)
            .collect();

        let c = gap.len();
        let f = self.config.feature_dim;
        let wd = &theta[self.dense_weight_offset..self.dense_bias_offset];
        let bd = &theta[self.dense_bias_offset..self.dense_bias_offset + f];
        let dense_pre: Vec<f64> = (0..f)
            .map(|j| bd[j] + dot(&wd[j * c..(j + 1) * c], &gap))
            .collect();
        let features = dense_pre.iter().map(|&v| silu(v)).collect();
        Ok((
            features,
            EncoderCache {
                inputs,
                pre,
                pooled_last: x,
                gap,
                dense_pre,
            },
        ))
    }

    /// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(features).
    pub fn backward(&self, theta: &[f64], cache: &EncoderCache, d_features: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.n_params);
        let f = self.config.feature_dim;
        let c = cache.gap.len();
        let d_pre: Vec<f64> = d_features
            .iter()
            .zip(&cache.dense_pre)
            .map(|(&d, &a)| d * silu_grad(a))
            .collect();
        let mut d_gap = vec![0.0; c];
        {
            let wd = &theta[self.dense_weight_offset..self.dense_bias_offset];
            let (gw, gb) = grad[self.dense_weight_offset..].split_at_mut(f * c);
            for j in 0..f {
                let dj = d_pre[j];
                gb[j] += dj;
                let row = &wd[j * c..(j + 1) * c];
                let grow = &mut gw[j * c..(j + 1) * c];
                for k in 0..c {
                    grow[k] += dj * cache.gap[k];
                    d_gap[k] += dj * row[k];
                }
            }
        }

        let last = self.blocks.last().expect("validated non-empty");
        let (ph, pw) = last.pooled();
        let area = (ph * pw) as f64;
        let mut d_x: Vec<f64> = Vec::with_capacity(cache.pooled_last.len());
        for &dg in &d_gap {
            d_x.extend(std::iter::repeat(dg / area).take(ph * pw));
        }

        for (i, b) in self.blocks.iter().enumerate().rev() {
            let d_act = avg_pool_backward(&d_x, b.cout, b.h, b.w);
            let d_a: Vec<f64> = d_act
                .iter()
                .zip(&cache.pre[i])
                .map(|(&d, &a)| d * silu_grad(a))
                .collect();
            d_x = conv_backward(b, theta, &cache.inputs[i], &d_a, grad, i > 0);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row ranges for a kernel offset `d` in {-1, 0, 1}: output index `o`
/// reads input `o + d`, valid for `o` in the returned range.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n - d as usize } else { n };
    (lo, hi)
}

fn conv_forward(b: &Block, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let (h, w) = (b.h, b.w);
    let plane = h * w;
    let weights = &theta[b.weight_offset..b.bias_offset];
    let bias = &theta[b.bias_offset..b.bias_offset + b.cout];
    let mut out = vec![0.0; b.cout * plane];
    for co in 0..b.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..b.cin {
            let inp = &x[ci * plane..(ci + 1) * plane];
            let k = &weights[(co * b.cin + ci) * 9..(co * b.cin + ci + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = k[ky * 3 + kx];
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let start = (iy * w) as isize + x0 as isize + dx;
                        let irow = &inp[start as usize..start as usize + (x1 - x0)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns d(loss)/d(input) when
/// `need_input_grad` is set (an empty vector otherwise).
fn conv_backward(
    b: &Block,
    theta: &[f64],
    x: &[f64],
    d_out: &[f64],
    grad: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let (h, w) = (b.h, b.w);
    let plane = h * w;
    let mut d_x = if need_input_grad {
        vec![0.0; b.cin * plane]
    } else {
        Vec::new()
    };
    for co in 0..b.cout {
        let dout = &d_out[co * plane..(co + 1) * plane];
        grad[b.bias_offset + co] += dout.iter().sum::<f64>();
        for ci in 0..b.cin {
            let inp = &x[ci * plane..(ci + 1) * plane];
            let widx = b.weight_offset + (co * b.cin + ci) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = theta[widx + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let start = ((iy * w) as isize + x0 as isize + dx) as usize;
                        let drow = &dout[y * w + x0..y * w + x1];
                        let irow = &inp[start..start + (x1 - x0)];
                        acc += dot(drow, irow);
                        if need_input_grad {
                            let dxrow = &mut d_x[ci * plane + start..ci * plane + start + (x1 - x0)];
                            for (dv, gv) in dxrow.iter_mut().zip(drow) {
                                *dv += wv * gv;
                            }
                        }
                    }
                    grad[widx + ky * 3 + kx] += acc;
                }
            }
        }
    }
    d_x
}

fn avg_pool(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..ph {
            let r0 = &p[2 * y * w..];
            let r1 = &p[(2 * y + 1) * w..];
            for xx in 0..pw {
                out.push(0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]));
            }
        }
    }
    out
}

fn avg_pool_backward(d: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let o = &mut out[ch * h * w..(ch + 1) * h * w];
        let dp = &d[ch * ph * pw..(ch + 1) * ph * pw];
        for y in 0..ph {
            for xx in 0..pw {
                let g = 0.25 * dp[y * pw + xx];
                o[2 * y * w + 2 * xx] = g;
                o[2 * y * w + 2 * xx + 1] = g;
                o[(2 * y + 1) * w + 2 * xx] = g;
                o[(2 * y + 1) * w + 2 * xx + 1] = g;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            in_height: 9,
            in_width: 12,
            channels: vec![2, 3],
            feature_dim: 4,
        }
    }

    /// Direct (index-by-index) convolution used to check the sliced version.
    fn naive_conv(b: &Block, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let (h, w) = (b.h as isize, b.w as isize);
        let mut out = vec![0.0; b.cout * b.h * b.w];
        for co in 0..b.cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = theta[b.bias_offset + co];
                    for ci in 0..b.cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let iy = y + ky - 1;
                                let ix = xx + kx - 1;
                                if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                    continue;
                                }
                                let wi = b.weight_offset
                                    + (co * b.cin + ci) * 9
                                    + (ky * 3 + kx) as usize;
                                s += theta[wi] * x[ci * b.h * b.w + (iy * w + ix) as usize];
                            }
                        }
                    }
                    out[co * b.h * b.w + (y * w + xx) as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let enc = Encoder::new(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut theta = enc.init(&mut rng);
        for v in theta.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let b = enc.blocks[1];
        let x: Vec<f64> = (0..b.cin * b.h * b.w).map(|_| rng.gen()).collect();
        let fast = conv_forward(&b, &theta, &x);
        let slow = naive_conv(&b, &theta, &x);
        for (a, e) in fast.iter().zip(&slow) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count() {
        let enc = Encoder::new(tiny()).unwrap();
        // conv 1->2, conv 2->3, dense 3->4
        assert_eq!(enc.n_params(), (2 * 9 + 2) + (3 * 2 * 9 + 3) + (4 * 3 + 4));
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let enc = Encoder::new(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = enc.init(&mut rng);
        let x: Vec<f64> = (0..enc.input_len()).map(|_| rng.gen()).collect();
        let probe: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |t: &[f64]| -> f64 { dot(&enc.forward(t, &x).unwrap(), &probe) };
        let (_, cache) = enc.forward_cached(&theta, &x).unwrap();
        let mut grad = vec![0.0; enc.n_params()];
        enc.backward(&theta, &cache, &probe, &mut grad);
        let h = 1e-5;
        for i in 0..enc.n_params() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (objective(&tp) - objective(&tm)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(err < 1e-5, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn rejects_wrong_input_size() {
        let enc = Encoder::new(tiny()).unwrap();
        let theta = vec![0.0; enc.n_params()];
        assert!(enc.forward(&theta, &[0.0; 5]).is_err());
        assert!(Encoder::new(EncoderConfig {
            in_height: 3,
            ..tiny()
        })
        .is_err());
    }
}
