//! Periodic shuffling (pixel shuffle) and sub-pixel convolution.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

use super::conv::pointwise_conv_fwd;

/// Channel-to-subpixel mapping. Only `ChannelMajor` is used by the network;
/// `Transposed` swaps the row/column phase and exists so the self-test can
/// prove it notices a wrong layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShuffleLayout {
    #[default]
    ChannelMajor,
    Transposed,
}

fn shuffled_dims(d: Dims, t: usize) -> Result<Dims> {
    if t == 0 {
        return Err(Error::Spec("upsample factor must be >= 1".into()));
    }
    let t2 = t * t;
    if d.c % t2 != 0 {
        return Err(Error::Shape(format!("{} channels not divisible by t^2 = {t2}", d.c)));
    }
    Ok(Dims { n: d.n, c: d.c / t2, h: d.h * t, w: d.w * t })
}

/// `out(n, c, y, x) = in(n, c*t^2 + t*(y mod t) + (x mod t), y / t, x / t)`.
pub fn pixel_shuffle_fwd<T: Scalar>(input: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    pixel_shuffle_fwd_with(input, t, ShuffleLayout::ChannelMajor)
}

pub fn pixel_shuffle_fwd_with<T: Scalar>(input: &Tensor<T>, t: usize, layout: ShuffleLayout) -> Result<Tensor<T>> {
    let d = input.dims();
    let od = shuffled_dims(d, t)?;
    let mut out = Tensor::zeros(od);
    for n in 0..od.n {
        for c in 0..od.c {
            for y in 0..od.h {
                for x in 0..od.w {
                    let (py, px) = match layout {
                        ShuffleLayout::ChannelMajor => (y % t, x % t),
                        ShuffleLayout::Transposed => (x % t, y % t),
                    };
                    let ic = c * t * t + t * py + px;
                    *out.at_mut(n, c, y, x) = input.at(n, ic, y / t, x / t);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse permutation of [`pixel_shuffle_fwd`]; also its gradient.
pub fn pixel_shuffle_bwd<T: Scalar>(grad_out: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let od = grad_out.dims();
    if t == 0 || od.h % t != 0 || od.w % t != 0 {
        return Err(Error::Shape(format!("{od} is not a multiple of the factor {t}")));
    }
    let d = Dims { n: od.n, c: od.c * t * t, h: od.h / t, w: od.w / t };
    let mut gin = Tensor::zeros(d);
    for n in 0..od.n {
        for c in 0..od.c {
            for y in 0..od.h {
                for x in 0..od.w {
                    let ic = c * t * t + t * (y % t) + (x % t);
                    *gin.at_mut(n, ic, y / t, x / t) = grad_out.at(n, c, y, x);
                }
            }
        }
    }
    Ok(gin)
}

/// Pointwise conv to `F_out * t^2` channels followed by periodic shuffling.
pub fn subpixel_conv<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    t: usize,
) -> Result<Tensor<T>> {
    let mid = pointwise_conv_fwd(input, weight, bias)?;
    pixel_shuffle_fwd(&mid, t)
}
