//! Per-channel batch normalisation over `(batch, height, width)`.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the newest batch in the running-statistics average.
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, DEFAULT_BN_MOMENTUM, DEFAULT_BN_EPS)
    }

    pub fn with_params(channels: usize, momentum: f64, eps: f64) -> Self {
        assert!(eps > 0.0, "eps must be positive");
        assert!(
            momentum > 0.0 && momentum < 1.0,
            "momentum must be in (0, 1)"
        );
        BatchNormLayer {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
            mode: Mode::Train,
        }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok((b, h * w))
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

/// The `(h, w)` planes of channel `ch` across the batch.
fn planes(b: usize, c: usize, p: usize, ch: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..b).map(move |n| {
        let base = (n * c + ch) * p;
        base..base + p
    })
}

/// Normalises `x` according to `layer.mode`; in train mode the running
/// statistics are updated.
pub fn batchnorm_forward(x: &Tensor, layer: &mut BatchNormLayer) -> Result<(Tensor, BnCache)> {
    let (b, p) = layer.dims(x)?;
    let c = layer.channels;
    let mode = layer.mode;
    if mode == Mode::Train && b < 2 {
        return Err(Error::Shape(format!(
            "batch norm in train mode needs a batch of at least 2, got {b}"
        )));
    }
    let m = (b * p) as f64;
    let xd = x.data();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut x_hat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for (ch, inv) in inv_std.iter_mut().enumerate() {
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = planes(b, c, p, ch)
                    .map(|r| xd[r].iter().sum::<f64>())
                    .sum::<f64>()
                    / m;
                let var = planes(b, c, p, ch)
                    .map(|r| xd[r].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                    .sum::<f64>()
                    / m;
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let keep = 1.0 - layer.momentum;
                layer.running_mean[ch] = keep * layer.running_mean[ch] + layer.momentum * mean;
                layer.running_var[ch] = keep * layer.running_var[ch] + layer.momentum * unbiased;
                (mean, var)
            }
            Mode::Inference => (layer.running_mean[ch], layer.running_var[ch]),
        };
        let is = 1.0 / (var + layer.eps).sqrt();
        *inv = is;
        let (g, bt) = (layer.gamma[ch], layer.beta[ch]);
        for r in planes(b, c, p, ch) {
            for ((xh, y), v) in x_hat[r.clone()]
                .iter_mut()
                .zip(&mut out.data_mut()[r.clone()])
                .zip(&xd[r])
            {
                *xh = (v - mean) * is;
                *y = g * *xh + bt;
            }
        }
    }
    Ok((
        out,
        BnCache {
            x_hat,
            inv_std,
            shape: x.shape().to_vec(),
            mode,
        },
    ))
}

/// Inference-mode forward pass that leaves the layer untouched.
pub fn batchnorm_infer(x: &Tensor, layer: &BatchNormLayer) -> Result<Tensor> {
    let (b, p) = layer.dims(x)?;
    let c = layer.channels;
    let mut out = x.clone();
    for ch in 0..c {
        let is = 1.0 / (layer.running_var[ch] + layer.eps).sqrt();
        let scale = layer.gamma[ch] * is;
        let shift = layer.beta[ch] - layer.running_mean[ch] * scale;
        for r in planes(b, c, p, ch) {
            out.data_mut()[r]
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub grad_x: Tensor,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    layer: &BatchNormLayer,
) -> Result<BnGrads> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::Shape(format!(
            "batch norm gradient {:?} does not match forward shape {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let (b, p) = layer.dims(grad_out)?;
    let c = layer.channels;
    let m = (b * p) as f64;
    let dy = grad_out.data();
    let xh = &cache.x_hat;
    let mut grad_x = Tensor::zeros(cache.shape.clone());
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for r in planes(b, c, p, ch) {
            for (d, h) in dy[r.clone()].iter().zip(&xh[r]) {
                sum_dy += d;
                sum_dy_xh += d * h;
            }
        }
        grad_gamma[ch] = sum_dy_xh;
        grad_beta[ch] = sum_dy;
        let scale = layer.gamma[ch] * cache.inv_std[ch];
        for r in planes(b, c, p, ch) {
            let gx = &mut grad_x.data_mut()[r.clone()];
            match cache.mode {
                Mode::Train => {
                    for ((g, d), h) in gx.iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                        *g = scale / m * (m * d - sum_dy - h * sum_dy_xh);
                    }
                }
                Mode::Inference => {
                    for (g, d) in gx.iter_mut().zip(&dy[r]) {
                        *g = scale * d;
                    }
                }
            }
        }
    }
    Ok(BnGrads {
        grad_x,
        grad_gamma,
        grad_beta,
    })
}
