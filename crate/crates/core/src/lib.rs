//! Cascaded factorized ASPP segmentation back-end with sub-pixel
//! upsampling, trainable at toy scale on the CPU.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod bench;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod netgraph;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod toydata;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::{DType, Scalar};
pub use tensor::{argmax_channel, concat_channels, tensor_new, Dims, LabelMap, Tensor, IGNORE_LABEL};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = netgraph::Graph<f32>;
pub type Graph64 = netgraph::Graph<f64>;
pub type BackendGraph32 = netgraph::BackendGraph<f32>;
pub type BackendGraph64 = netgraph::BackendGraph<f64>;
pub type SegModel32 = netgraph::SegModel<f32>;
pub type SegModel64 = netgraph::SegModel<f64>;
/// Exact MAC ratios.
pub type MacRatio = num_rational::Ratio<u64>;
