//! Small trainable stand-in for a classification backbone: a stack of
//! stride-2 3x3 conv + BN + ReLU stages with two tap points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{Graph, GraphBuilder};
use crate::ops::{ConvSpec, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub in_channels: usize,
    /// Output width of each stride-2 stage.
    pub widths: Vec<usize>,
    /// Stage whose output is the low-level feature (0-based).
    pub low_tap: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig { in_channels: 3, widths: vec![16, 32, 64, 128, 128], low_tap: 1 }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("frontend needs positive channel counts and at least one stage".into()));
        }
        if self.low_tap + 1 >= self.widths.len() {
            return Err(Error::Config(format!(
                "low_tap {} must precede the last of {} stages",
                self.low_tap,
                self.widths.len()
            )));
        }
        Ok(())
    }

    /// Stride of the high-level (last) feature relative to the input image.
    pub fn high_stride(&self) -> usize {
        1 << self.widths.len()
    }

    pub fn low_stride(&self) -> usize {
        1 << (self.low_tap + 1)
    }

    pub fn high_channels(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn low_channels(&self) -> usize {
        self.widths[self.low_tap]
    }
}

#[derive(Debug, Clone)]
pub struct ToyFrontend<T> {
    pub config: FrontendConfig,
    pub graph: Graph<T>,
}

impl<T: Scalar> ToyFrontend<T> {
    pub fn new(config: &FrontendConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = GraphBuilder::new(seed);
        let mut x = b.input(config.in_channels);
        let mut c_in = config.in_channels;
        let mut low = None;
        for (i, &w) in config.widths.iter().enumerate() {
            x = b.conv_bn_relu(&format!("stage{i}"), x, ConvSpec::full(3, 1, c_in, w).with_stride(2))?;
            if i == config.low_tap {
                low = Some(x);
            }
            c_in = w;
        }
        let graph = b.finish(&[low.expect("validated tap"), x]);
        Ok(ToyFrontend { config: config.clone(), graph })
    }

    /// Returns `(low_feat, high_feat)`.
    pub fn forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        let d = images.dims();
        let s = self.config.high_stride();
        if d.h % s != 0 || d.w % s != 0 {
            return Err(Error::Shape(format!("frontend input {d} must have extents divisible by {s}")));
        }
        let mut outs = self.graph.forward(&[images], mode)?;
        let high = outs.pop().expect("two outputs");
        let low = outs.pop().expect("two outputs");
        Ok((low, high))
    }

    /// Returns the gradient with respect to the images.
    pub fn backward(&mut self, grad_low: &Tensor<T>, grad_high: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.graph.backward(&[grad_low, grad_high])?;
        Ok(g.pop().expect("one input"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn stride_arithmetic() {
        let mut fe = ToyFrontend::<f32>::new(&FrontendConfig::default(), 3).unwrap();
        let x = Tensor::full(Dims::new(1, 3, 64, 128).unwrap(), 0.5);
        let (low, high) = fe.forward(&x, Mode::Infer).unwrap();
        assert_eq!(low.dims(), Dims::new(1, 32, 16, 32).unwrap());
        assert_eq!(high.dims(), Dims::new(1, 128, 2, 4).unwrap());
    }

    #[test]
    fn indivisible_input_rejected() {
        let mut fe = ToyFrontend::<f32>::new(&FrontendConfig::default(), 3).unwrap();
        let x = Tensor::full(Dims::new(1, 3, 48, 64).unwrap(), 0.5);
        assert!(matches!(fe.forward(&x, Mode::Infer), Err(Error::Shape(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let x = Tensor::full(Dims::new(2, 3, 32, 32).unwrap(), 0.25f32);
        let mut a = ToyFrontend::<f32>::new(&FrontendConfig::default(), 9).unwrap();
        let mut b = ToyFrontend::<f32>::new(&FrontendConfig::default(), 9).unwrap();
        let ra = a.forward(&x, Mode::Train).unwrap();
        let rb = b.forward(&x, Mode::Train).unwrap();
        assert_eq!(ra.0, rb.0);
        assert_eq!(ra.1, rb.1);
    }
}
