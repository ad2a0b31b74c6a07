//! Stride-1, same-padded 2-d cross-correlation.
//!
//! Each batch element is lowered to a `(in_ch * k * k) x (h * w)` patch
//! matrix so forward and both backward products run as one GEMM each.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm, View};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `(out_ch, in_ch, kernel, kernel)`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {kernel} must be odd")));
        }
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::Config(
                "convolution needs at least one channel".into(),
            ));
        }
        Ok(ConvLayer {
            in_ch,
            out_ch,
            kernel,
            weights: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        })
    }

    /// Fan-in scaled normal weights, zero bias.
    pub fn he_init<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_ch, out_ch, kernel)?;
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        layer
            .weights
            .iter_mut()
            .for_each(|w| *w = normal.sample(rng));
        Ok(layer)
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        match *x.shape() {
            [b, c, h, w] if c == self.in_ch => Ok((b, h, w)),
            _ => Err(Error::Shape(format!(
                "conv expects (batch, {}, h, w), got {:?}",
                self.in_ch,
                x.shape()
            ))),
        }
    }
}

/// Upper bound on the patch-matrix size of one batched GEMM, in values.
const COLS_BUDGET: usize = 1 << 17;

/// Lowers one `(c, h, w)` image into columns `off..off + h*w` of a patch
/// matrix whose rows are `ld` long.
#[allow(clippy::too_many_arguments)]
fn im2col(
    img: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    cols: &mut [f64],
    ld: usize,
    off: usize,
) {
    let pad = k / 2;
    let p = h * w;
    for ch in 0..c {
        let plane = &img[ch * p..(ch + 1) * p];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ch * k + ki) * k + kj) * ld + off..][..p];
                for i in 0..h {
                    let si = i as isize + ki as isize - pad as isize;
                    let out = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    // valid output columns j satisfy 0 <= j + kj - pad < w
                    let lo = pad.saturating_sub(kj);
                    let hi = (w + pad).saturating_sub(kj).min(w);
                    out[..lo.min(w)].fill(0.0);
                    if lo < hi {
                        let s0 = lo + kj - pad;
                        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    out[hi.max(lo).min(w)..].fill(0.0);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    img: &mut [f64],
    ld: usize,
    off: usize,
) {
    let pad = k / 2;
    let p = h * w;
    for ch in 0..c {
        let plane = &mut img[ch * p..(ch + 1) * p];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ch * k + ki) * k + kj) * ld + off..][..p];
                for i in 0..h {
                    let si = i as isize + ki as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    let lo = pad.saturating_sub(kj);
                    let hi = (w + pad).saturating_sub(kj).min(w);
                    if lo < hi {
                        let s0 = lo + kj - pad;
                        dst[s0..s0 + (hi - lo)]
                            .iter_mut()
                            .zip(&row[i * w + lo..i * w + hi])
                            .for_each(|(d, g)| *d += g);
                    }
                }
            }
        }
    }
}

/// Samples per batched GEMM.
fn chunk_len(kk: usize, p: usize, b: usize) -> usize {
    (COLS_BUDGET / (kk * p).max(1)).clamp(1, b.max(1))
}

pub fn conv2d_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (b, h, w) = layer.check_input(x)?;
    let (k, p, kk) = (layer.kernel, h * w, layer.fan_in());
    let (cin, cout) = (layer.in_ch, layer.out_ch);
    let mut out = Tensor::zeros(vec![b, cout, h, w]);
    let wv = View::row_major(&layer.weights, cout, kk);
    let nb = chunk_len(kk, p, b);
    let mut cols = vec![0.0; kk * nb * p];
    let mut tmp = vec![0.0; cout * nb * p];
    for start in (0..b).step_by(nb) {
        let m = nb.min(b - start);
        let ld = m * p;
        for j in 0..m {
            let n = start + j;
            im2col(
                &x.data()[n * cin * p..][..cin * p],
                cin,
                h,
                w,
                k,
                &mut cols,
                ld,
                j * p,
            );
        }
        let dst = &mut tmp[..cout * ld];
        gemm(1.0, wv, View::row_major(&cols[..kk * ld], kk, ld), 0.0, dst);
        for j in 0..m {
            let o = &mut out.data_mut()[(start + j) * cout * p..][..cout * p];
            for co in 0..cout {
                let bias = layer.bias[co];
                o[co * p..(co + 1) * p]
                    .iter_mut()
                    .zip(&dst[co * ld + j * p..][..p])
                    .for_each(|(y, v)| *y = v + bias);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    let (b, h, w) = layer.check_input(x)?;
    if grad_out.shape() != [b, layer.out_ch, h, w] {
        return Err(Error::Shape(format!(
            "conv gradient shape {:?} does not match output ({b}, {}, {h}, {w})",
            grad_out.shape(),
            layer.out_ch
        )));
    }
    let (k, p, kk) = (layer.kernel, h * w, layer.fan_in());
    let (cin, cout) = (layer.in_ch, layer.out_ch);
    let mut grad_x = Tensor::zeros(x.shape().to_vec());
    let mut grad_w = vec![0.0; layer.weights.len()];
    let mut grad_b = vec![0.0; cout];
    let nb = chunk_len(kk, p, b);
    let mut cols = vec![0.0; kk * nb * p];
    let mut grad_cols = vec![0.0; kk * nb * p];
    let mut g = vec![0.0; cout * nb * p];
    let wv = View::row_major(&layer.weights, cout, kk);
    for start in (0..b).step_by(nb) {
        let m = nb.min(b - start);
        let ld = m * p;
        for j in 0..m {
            let n = start + j;
            let src = &grad_out.data()[n * cout * p..][..cout * p];
            for co in 0..cout {
                let plane = &src[co * p..(co + 1) * p];
                grad_b[co] += plane.iter().sum::<f64>();
                g[co * ld + j * p..][..p].copy_from_slice(plane);
            }
            im2col(
                &x.data()[n * cin * p..][..cin * p],
                cin,
                h,
                w,
                k,
                &mut cols,
                ld,
                j * p,
            );
        }
        let gv = View::row_major(&g[..cout * ld], cout, ld);
        gemm(
            1.0,
            gv,
            View::row_major(&cols[..kk * ld], kk, ld).t(),
            1.0,
            &mut grad_w,
        );
        gemm(1.0, wv.t(), gv, 0.0, &mut grad_cols[..kk * ld]);
        for j in 0..m {
            let n = start + j;
            col2im(
                &grad_cols,
                cin,
                h,
                w,
                k,
                &mut grad_x.data_mut()[n * cin * p..][..cin * p],
                ld,
                j * p,
            );
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
