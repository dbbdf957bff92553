//! Wiring of the context-aggregation blocks and of each back-end variant.

use crate::error::{Error, Result};
use crate::ops::{ConvSpec, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{BackendConfig, Variant};
use super::graph::{Graph, GraphBuilder, Slot};

fn check_rates(rates: &[usize]) -> Result<()> {
    if rates.is_empty() || rates[0] < 1 || rates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("invalid atrous rates {rates:?}")));
    }
    Ok(())
}

/// Factorized ASPP: pointwise reduction, one depthwise atrous 3x3 branch per
/// rate, channel concat, pointwise fuse. Every conv carries BN + ReLU.
pub fn build_faspp_block<T: Scalar>(
    b: &mut GraphBuilder<T>,
    prefix: &str,
    x: Slot,
    in_channels: usize,
    out_channels: usize,
    rates: &[usize],
) -> Result<Slot> {
    check_rates(rates)?;
    let reduced = b.conv_bn_relu(&format!("{prefix}.reduce"), x, ConvSpec::pointwise(in_channels, out_channels))?;
    let branches = rates
        .iter()
        .map(|&r| b.conv_bn_relu(&format!("{prefix}.branch_r{r}"), reduced, ConvSpec::depthwise(3, r, out_channels)))
        .collect::<Result<Vec<_>>>()?;
    let cat = b.concat(format!("{prefix}.concat"), &branches);
    b.conv_bn_relu(&format!("{prefix}.fuse"), cat, ConvSpec::pointwise(rates.len() * out_channels, out_channels))
}

/// Unfactorized ASPP: one full 3x3 atrous conv per rate, concat, pointwise fuse.
pub fn build_aspp_block<T: Scalar>(
    b: &mut GraphBuilder<T>,
    prefix: &str,
    x: Slot,
    in_channels: usize,
    out_channels: usize,
    rates: &[usize],
) -> Result<Slot> {
    check_rates(rates)?;
    let branches = rates
        .iter()
        .map(|&r| b.conv_bn_relu(&format!("{prefix}.branch_r{r}"), x, ConvSpec::full(3, r, in_channels, out_channels)))
        .collect::<Result<Vec<_>>>()?;
    let cat = b.concat(format!("{prefix}.concat"), &branches);
    b.conv_bn_relu(&format!("{prefix}.fuse"), cat, ConvSpec::pointwise(rates.len() * out_channels, out_channels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Factorized,
    Full,
}

/// A graph holding a single context block, for benchmarks and MAC checks.
pub fn block_graph<T: Scalar>(
    kind: BlockKind,
    in_channels: usize,
    out_channels: usize,
    rates: &[usize],
    seed: u64,
) -> Result<Graph<T>> {
    let mut b = GraphBuilder::new(seed);
    let x = b.input(in_channels);
    let y = match kind {
        BlockKind::Factorized => build_faspp_block(&mut b, "faspp", x, in_channels, out_channels, rates)?,
        BlockKind::Full => build_aspp_block(&mut b, "aspp", x, in_channels, out_channels, rates)?,
    };
    Ok(b.finish(&[y]))
}

/// The back-end: high- and low-level features in, N-channel logits at label
/// resolution out.
#[derive(Debug, Clone)]
pub struct BackendGraph<T> {
    pub config: BackendConfig,
    pub graph: Graph<T>,
}

pub fn build_backend<T: Scalar>(config: &BackendConfig, seed: u64) -> Result<BackendGraph<T>> {
    config.validate()?;
    let c = config;
    let rates = &c.aspp_rates;
    let mut b = GraphBuilder::new(seed);
    let high = b.input(c.high_channels);
    let low = b.input(c.low_channels);

    // First context block on the high-level feature.
    let ctx1 = match c.variant {
        Variant::AsppFull => build_aspp_block(&mut b, "aspp1", high, c.high_channels, c.faspp1_channels, rates)?,
        _ => build_faspp_block(&mut b, "faspp1", high, c.high_channels, c.faspp1_channels, rates)?,
    };

    // First upsampling stage, onto the low-level grid. Sub-pixel
    // convolution keeps the channel count: F -> F * t^2 -> shuffle -> F.
    let f1 = c.faspp1_channels;
    let up1 = match c.variant {
        Variant::CfAsppSr => {
            let t2 = c.shuffle1_t * c.shuffle1_t;
            let proj = b.conv("up1.proj.conv", ctx1, ConvSpec::pointwise(f1, f1 * t2), false)?;
            b.tie_subpixel_phases(c.shuffle1_t)?;
            let proj = b.batch_norm("up1.proj.bn", proj);
            let proj = b.relu("up1.proj.relu", proj);
            b.pixel_shuffle("up1.shuffle", proj, c.shuffle1_t)?
        }
        Variant::BilinearBaseline => {
            let proj = b.conv_bn_relu("up1.proj", ctx1, ConvSpec::pointwise(f1, f1))?;
            b.bilinear("up1.bilinear", proj, c.shuffle1_t)?
        }
        _ => b.bilinear("up1.bilinear", ctx1, c.shuffle1_t)?,
    };

    let lowproj = b.conv_bn_relu("lowproj", low, ConvSpec::pointwise(c.low_channels, c.lowlevel_proj_channels))?;
    let fused = b.concat("fusion.concat", &[up1, lowproj]);
    let fused_c = b.channels(fused);

    // Second stage on the low-level grid.
    let ctx2 = match c.variant {
        Variant::CfAsppSr | Variant::CfAspp | Variant::BilinearBaseline => {
            build_faspp_block(&mut b, "faspp2", fused, fused_c, c.faspp2_channels, rates)?
        }
        Variant::AsppFull => build_aspp_block(&mut b, "aspp2", fused, fused_c, c.faspp2_channels, rates)?,
        Variant::FAspp => b.conv_bn_relu("decoder", fused, ConvSpec::full(3, 1, fused_c, c.faspp2_channels))?,
    };

    // Classifier and final upsampling to label resolution.
    let mut out = match c.variant {
        Variant::CfAsppSr => {
            let t2 = c.shuffle2_t * c.shuffle2_t;
            let head = b.conv("head.conv", ctx2, ConvSpec::pointwise(c.faspp2_channels, c.num_classes * t2), true)?;
            b.tie_subpixel_phases(c.shuffle2_t)?;
            b.pixel_shuffle("head.shuffle", head, c.shuffle2_t)?
        }
        _ => {
            let head = b.conv("head.conv", ctx2, ConvSpec::pointwise(c.faspp2_channels, c.num_classes), true)?;
            b.bilinear("head.bilinear", head, c.shuffle2_t)?
        }
    };
    if c.final_bilinear_t > 1 {
        out = b.bilinear("tail.bilinear", out, c.final_bilinear_t)?;
    }
    Ok(BackendGraph { config: c.clone(), graph: b.finish(&[out]) })
}

impl<T: Scalar> BackendGraph<T> {
    pub fn forward(&mut self, high: &Tensor<T>, low: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (hd, ld) = (high.dims(), low.dims());
        let c = &self.config;
        if hd.n != ld.n || hd.h * c.high_stride != ld.h * c.low_stride || hd.w * c.high_stride != ld.w * c.low_stride {
            return Err(Error::Shape(format!(
                "node fusion.concat: high-level {hd} at stride {} and low-level {ld} at stride {} do not cover the same label grid",
                c.high_stride, c.low_stride
            )));
        }
        let mut outs = self.graph.forward(&[high, low], mode)?;
        Ok(outs.pop().expect("one output"))
    }

    /// Returns gradients with respect to the (high, low) inputs.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = self.graph.backward(&[grad_logits])?;
        let low = g.pop().expect("two inputs");
        let high = g.pop().expect("two inputs");
        Ok((high, low))
    }
}
