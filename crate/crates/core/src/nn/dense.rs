use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm, View};
use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer over the flattened per-sample input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        DenseLayer {
            in_features,
            out_features,
            weights: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn he_init<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_features, out_features);
        let std = (2.0 / in_features.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        layer
            .weights
            .iter_mut()
            .for_each(|w| *w = normal.sample(rng));
        layer
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        if x.per_sample() != self.in_features {
            return Err(Error::Shape(format!(
                "dense layer expects {} features per sample, got {:?}",
                self.in_features,
                x.shape()
            )));
        }
        Ok(x.batch())
    }
}

pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let b = layer.check(x)?;
    let mut y = Tensor::zeros(vec![b, layer.out_features]);
    for row in y.data_mut().chunks_mut(layer.out_features) {
        row.copy_from_slice(&layer.bias);
    }
    if b <= MATVEC_MAX_BATCH {
        let rows = x.data().chunks_exact(layer.in_features.max(1));
        for (xr, yr) in rows.zip(y.data_mut().chunks_mut(layer.out_features)) {
            for (yv, wr) in yr
                .iter_mut()
                .zip(layer.weights.chunks_exact(layer.in_features.max(1)))
            {
                *yv += dot(wr, xr);
            }
        }
        return Ok(y);
    }
    gemm(
        1.0,
        View::row_major(x.data(), b, layer.in_features),
        View::row_major(&layer.weights, layer.out_features, layer.in_features).t(),
        1.0,
        y.data_mut(),
    );
    Ok(y)
}

/// Batches up to this size skip the blocked GEMM, whose weight packing
/// costs more than the product itself for a single scan.
const MATVEC_MAX_BATCH: usize = 4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (u, v) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += u[k] * v[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub grad_x: Tensor,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn dense_backward(x: &Tensor, layer: &DenseLayer, grad_out: &Tensor) -> Result<DenseGrads> {
    let b = layer.check(x)?;
    if grad_out.shape() != [b, layer.out_features] {
        return Err(Error::Shape(format!(
            "dense gradient {:?} does not match output ({b}, {})",
            grad_out.shape(),
            layer.out_features
        )));
    }
    let gv = View::row_major(grad_out.data(), b, layer.out_features);
    let mut grad_w = vec![0.0; layer.weights.len()];
    gemm(
        1.0,
        gv.t(),
        View::row_major(x.data(), b, layer.in_features),
        0.0,
        &mut grad_w,
    );
    let mut grad_b = vec![0.0; layer.out_features];
    for row in grad_out.data().chunks(layer.out_features) {
        grad_b.iter_mut().zip(row).for_each(|(g, v)| *g += v);
    }
    let mut grad_x = Tensor::zeros(x.shape().to_vec());
    gemm(
        1.0,
        gv,
        View::row_major(&layer.weights, layer.out_features, layer.in_features),
        0.0,
        grad_x.data_mut(),
    );
    Ok(DenseGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
