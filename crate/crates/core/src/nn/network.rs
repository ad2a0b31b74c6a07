use super::activation::{relu, relu_backward};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_infer, BnCache, Mode};
use super::conv::{conv2d_backward, conv2d_forward};
use super::dense::{dense_backward, dense_forward};
use super::loss::softmax_xent;
use super::{BatchNormLayer, ConvLayer, DenseLayer, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu,
    Dense(DenseLayer),
    /// `x + body(x)`; the body must preserve the shape.
    Residual(Sequential),
}

/// Structural census of a network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCounts {
    pub conv: usize,
    pub batch_norm: usize,
    pub relu: usize,
    pub dense: usize,
    pub residual: usize,
}

impl LayerCounts {
    fn add(&mut self, other: LayerCounts) {
        self.conv += other.conv;
        self.batch_norm += other.batch_norm;
        self.relu += other.relu;
        self.dense += other.dense;
        self.residual += other.residual;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

/// Forward-pass record needed to run the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape(Vec<Cache>);

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    BatchNorm(BnCache),
    Residual(Tape),
}

impl Layer {
    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::BatchNorm(_) | Layer::Dense(_) => 2,
            Layer::Relu => 0,
            Layer::Residual(body) => body.param_count(),
        }
    }
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn counts(&self) -> LayerCounts {
        let mut c = LayerCounts::default();
        for layer in &self.layers {
            match layer {
                Layer::Conv(_) => c.conv += 1,
                Layer::BatchNorm(_) => c.batch_norm += 1,
                Layer::Relu => c.relu += 1,
                Layer::Dense(_) => c.dense += 1,
                Layer::Residual(body) => {
                    c.residual += 1;
                    c.add(body.counts());
                }
            }
        }
        c
    }

    /// Number of parameter tensors.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for layer in &mut self.layers {
            match layer {
                Layer::BatchNorm(bn) => bn.mode = mode,
                Layer::Residual(body) => body.set_mode(mode),
                _ => {}
            }
        }
    }

    /// Parameter tensors in a fixed traversal order (weights before bias,
    /// gamma before beta).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weights.as_slice(), c.bias.as_slice()]),
                Layer::BatchNorm(b) => out.extend([b.gamma.as_slice(), b.beta.as_slice()]),
                Layer::Dense(d) => out.extend([d.weights.as_slice(), d.bias.as_slice()]),
                Layer::Relu => {}
                Layer::Residual(body) => out.extend(body.params()),
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weights.as_mut_slice(), c.bias.as_mut_slice()]),
                Layer::BatchNorm(b) => out.extend([b.gamma.as_mut_slice(), b.beta.as_mut_slice()]),
                Layer::Dense(d) => out.extend([d.weights.as_mut_slice(), d.bias.as_mut_slice()]),
                Layer::Relu => {}
                Layer::Residual(body) => out.extend(body.params_mut()),
            }
        }
        out
    }

    /// Zeroed gradient buffers mirroring [`Sequential::params`].
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Running statistics of every batch-norm layer, in traversal order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::BatchNorm(b) => {
                    out.extend([b.running_mean.as_slice(), b.running_var.as_slice()])
                }
                Layer::Residual(body) => out.extend(body.buffers()),
                _ => {}
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::BatchNorm(b) => {
                    out.extend([b.running_mean.as_mut_slice(), b.running_var.as_mut_slice()])
                }
                Layer::Residual(body) => out.extend(body.buffers_mut()),
                _ => {}
            }
        }
        out
    }

    /// Forward pass that records what the backward pass needs. Batch-norm
    /// layers run in whatever mode they are set to.
    pub fn forward(&mut self, x: Tensor) -> Result<(Tensor, Tape)> {
        let mut tape = Vec::with_capacity(self.layers.len());
        let mut x = x;
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv(c) => {
                    let y = conv2d_forward(&x, c)?;
                    tape.push(Cache::Input(x));
                    y
                }
                Layer::BatchNorm(bn) => {
                    let (y, cache) = batchnorm_forward(&x, bn)?;
                    tape.push(Cache::BatchNorm(cache));
                    y
                }
                Layer::Relu => {
                    let y = relu(&x);
                    tape.push(Cache::Input(x));
                    y
                }
                Layer::Dense(d) => {
                    let y = dense_forward(&x, d)?;
                    tape.push(Cache::Input(x));
                    y
                }
                Layer::Residual(body) => {
                    let (mut y, inner) = body.forward(x.clone())?;
                    add_assign(&mut y, &x)?;
                    tape.push(Cache::Residual(inner));
                    y
                }
            };
        }
        Ok((x, Tape(tape)))
    }

    /// Inference-only forward pass; batch norm always uses running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => conv2d_forward(&x, c)?,
                Layer::BatchNorm(bn) => batchnorm_infer(&x, bn)?,
                Layer::Relu => relu(&x),
                Layer::Dense(d) => dense_forward(&x, d)?,
                Layer::Residual(body) => {
                    let mut y = body.infer(&x)?;
                    add_assign(&mut y, &x)?;
                    y
                }
            };
        }
        Ok(x)
    }

    /// Back-propagates `grad` through the recorded pass, accumulating into
    /// `grads` (laid out like [`Sequential::params`]) and returning the
    /// gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, grad: Tensor, grads: &mut [Vec<f64>]) -> Result<Tensor> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        let mut g = grad;
        for ((layer, cache), &off) in self.layers.iter().zip(&tape.0).zip(&offsets).rev() {
            g = match (layer, cache) {
                (Layer::Conv(c), Cache::Input(x)) => {
                    let r = conv2d_backward(x, c, &g)?;
                    accumulate(&mut grads[off], &r.grad_w);
                    accumulate(&mut grads[off + 1], &r.grad_b);
                    r.grad_x
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm(cache)) => {
                    let r = batchnorm_backward(&g, cache, bn)?;
                    accumulate(&mut grads[off], &r.grad_gamma);
                    accumulate(&mut grads[off + 1], &r.grad_beta);
                    r.grad_x
                }
                (Layer::Relu, Cache::Input(x)) => relu_backward(x, &g)?,
                (Layer::Dense(d), Cache::Input(x)) => {
                    let r = dense_backward(x, d, &g)?;
                    accumulate(&mut grads[off], &r.grad_w);
                    accumulate(&mut grads[off + 1], &r.grad_b);
                    r.grad_x
                }
                (Layer::Residual(body), Cache::Residual(inner)) => {
                    let n = body.param_count();
                    let mut gx = body.backward(inner, g.clone(), &mut grads[off..off + n])?;
                    add_assign(&mut gx, &g)?;
                    gx
                }
                _ => unreachable!("tape does not match network"),
            };
        }
        Ok(g)
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn add_assign(dst: &mut Tensor, src: &Tensor) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(crate::error::Error::Shape(format!(
            "residual body changed shape {:?} -> {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    accumulate(dst.data_mut(), src.data());
    Ok(())
}

/// Anything with flat parameters and a scalar training loss.
pub trait Differentiable {
    fn parameters(&self) -> Vec<&[f64]>;
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
    /// Loss on `(x, labels)` in training mode.
    fn loss(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64>;
    /// Loss and its gradient, laid out like [`Differentiable::parameters`].
    fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// A sequential network whose output is treated as class logits.
impl Differentiable for Sequential {
    fn parameters(&self) -> Vec<&[f64]> {
        self.params()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.params_mut()
    }

    fn loss(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let (logits, _) = self.forward(x.clone())?;
        Ok(softmax_xent(&logits, labels)?.0)
    }

    fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (logits, tape) = self.forward(x.clone())?;
        let (loss, g) = softmax_xent(&logits, labels)?;
        let mut grads = self.zero_grads();
        self.backward(&tape, g, &mut grads)?;
        Ok((loss, grads))
    }
}
