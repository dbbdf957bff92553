//! Layer kernels with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod shuffle;
pub mod upsample;

pub use activation::{relu_bwd, relu_fwd};
pub use conv::{
    conv2d_bwd, conv2d_fwd, conv2d_naive, depthwise_atrous_conv_bwd, depthwise_atrous_conv_fwd,
    pointwise_conv_bwd, pointwise_conv_fwd, ConvGrads, ConvSpec,
};
pub use loss::cross_entropy_loss;
pub use norm::{batchnorm_bwd, batchnorm_fwd, BatchNormCache, BatchNormState};
pub use optim::sgd_momentum_step;
pub use shuffle::{pixel_shuffle_bwd, pixel_shuffle_fwd, pixel_shuffle_fwd_with, subpixel_conv, ShuffleLayout};
pub use upsample::{bilinear_upsample, bilinear_upsample_bwd};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch norm behaviour: batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor with its gradient and momentum buffers.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let d = value.dims();
        Param { value, grad: Tensor::zeros(d), momentum: Tensor::zeros(d) }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn sgd_step(&mut self, lr: T, mu: T) {
        sgd_momentum_step(self.value.data_mut(), self.grad.data(), self.momentum.data_mut(), lr, mu);
    }
}
