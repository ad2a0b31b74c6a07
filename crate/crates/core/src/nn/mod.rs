//! A small CPU neural-network engine: convolution, batch norm, ReLU, dense
//! layers and softmax cross-entropy, all with hand-written backward passes,
//! trained by SGD with momentum. Everything is `f64`.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
mod tensor;

pub use activation::{relu, relu_backward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormLayer, BnCache, BnGrads, Mode,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::{softmax, softmax_xent};
pub use network::{Differentiable, Layer, LayerCounts, Sequential, Tape};
pub use optim::{Sgdm, SgdmConfig};
pub use tensor::Tensor;
