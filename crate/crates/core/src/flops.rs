//! Analytic multiply-accumulate and parameter accounting.
//!
//! One MAC is one multiply plus one accumulate. Conv biases are folded into
//! the accumulation and cost nothing; batch norm costs two operations per
//! element (scale and shift). ReLU, concat, pixel shuffle and bilinear
//! upsampling are counted as zero. All counts are per sample.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::netgraph::{Graph, Layer, SegModel};
use crate::scalar::Scalar;
use crate::tensor::Dims;

/// MACs of a `kh x kw` convolution producing an `h x w x f_o` map.
/// The atrous rate does not enter: inserted zeros are never multiplied.
pub fn macs_conv(h: u64, w: u64, kh: u64, kw: u64, f_i: u64, f_o: u64, depthwise: bool) -> u64 {
    let per_pixel = if depthwise { kh * kw * f_o } else { kh * kw * f_i * f_o };
    h * w * per_pixel
}

/// Cost of a full `k x k` conv over the cost of its pointwise + depthwise
/// factorization, per output pixel.
pub fn factorization_ratio(f_i: u64, f_o: u64, k: u64) -> Ratio<u64> {
    let full = macs_conv(1, 1, k, k, f_i, f_o, false);
    let factorized = macs_conv(1, 1, 1, 1, f_i, f_o, false) + macs_conv(1, 1, k, k, f_o, f_o, true);
    Ratio::new(full, factorized)
}

/// Decimal rendering rounded half-up to `places` digits.
pub fn render_rounded(r: Ratio<u64>, places: u32) -> String {
    let scale = 10u128.pow(places);
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let scaled = (2 * n * scale + d) / (2 * d);
    render_scaled(scaled, places)
}

/// Decimal rendering truncated to `places` digits.
pub fn render_floor(r: Ratio<u64>, places: u32) -> String {
    let scale = 10u128.pow(places);
    let scaled = *r.numer() as u128 * scale / *r.denom() as u128;
    render_scaled(scaled, places)
}

fn render_scaled(scaled: u128, places: u32) -> String {
    if places == 0 {
        return scaled.to_string();
    }
    let scale = 10u128.pow(places);
    format!("{}.{:0width$}", scaled / scale, scaled % scale, width = places as usize)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopRow {
    pub layer: String,
    pub kind: &'static str,
    pub out: Dims,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub rows: Vec<FlopRow>,
    pub total_macs: u64,
    pub total_params: u64,
    /// Peak live activation elements per sample.
    pub activation_peak: u64,
}

pub const CSV_HEADER: &str = "layer,type,out_n,out_c,out_h,out_w,macs,params";

impl FlopReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let o = r.out;
            s.push_str(&format!("{},{},{},{},{},{},{},{}\n", r.layer, r.kind, o.n, o.c, o.h, o.w, r.macs, r.params));
        }
        s
    }

    /// Sum of MACs over rows whose layer name starts with `prefix`.
    pub fn macs_with_prefix(&self, prefix: &str) -> u64 {
        self.rows.iter().filter(|r| r.layer.starts_with(prefix)).map(|r| r.macs).sum()
    }
}

/// Per-sample report for a forward pass over inputs of the given extents.
/// Output dims in the rows keep the batch size that was passed in.
pub fn report_graph<T: Scalar>(graph: &Graph<T>, inputs: &[Dims]) -> Result<FlopReport> {
    let n = inputs.first().map_or(1, |d| d.n);
    if inputs.iter().any(|d| d.n != n) {
        return Err(Error::Shape("inputs disagree on batch size".into()));
    }
    let dims = graph.infer_dims(inputs)?;
    let mut rows = Vec::with_capacity(graph.nodes().len());
    for node in graph.nodes() {
        let out = dims[node.output.0];
        let (h, w) = (out.h as u64, out.w as u64);
        let (macs, params) = match &node.layer {
            Layer::Conv { spec, bias, .. } => {
                let (kh, kw) = (spec.kernel.0 as u64, spec.kernel.1 as u64);
                let (fi, fo) = (spec.in_channels as u64, spec.out_channels as u64);
                let weights = if spec.depthwise { kh * kw * fo } else { kh * kw * fi * fo };
                let b = if bias.is_some() { fo } else { 0 };
                (macs_conv(h, w, kh, kw, fi, fo, spec.depthwise), weights + b)
            }
            Layer::BatchNorm(_) => (2 * (out.c * out.h * out.w) as u64, 2 * out.c as u64),
            _ => (0, 0),
        };
        rows.push(FlopRow { layer: node.name.clone(), kind: node.layer.kind(), out, macs, params });
    }
    let peak = graph.planned_activation_peak(&dims) as u64;
    Ok(FlopReport {
        total_macs: rows.iter().map(|r| r.macs).sum(),
        total_params: rows.iter().map(|r| r.params).sum(),
        activation_peak: peak / n as u64,
        rows,
    })
}

/// Report for a whole model producing labels of extent `h x w`: front-end
/// rows (if any) then back-end rows, prefixed with their graph name. The
/// activation peak is the larger of the two graphs' peaks.
pub fn report_model<T: Scalar>(model: &SegModel<T>, h: usize, w: usize) -> Result<FlopReport> {
    let bc = &model.backend.config;
    let (hi, lo) = bc.feature_dims_for_labels(h, w)?;
    let high = Dims::new(1, bc.high_channels, hi.0, hi.1)?;
    let low = Dims::new(1, bc.low_channels, lo.0, lo.1)?;
    let mut parts = Vec::new();
    if let Some(fe) = &model.frontend {
        let img = crate::netgraph::image_dims_for_labels(model, 1, h, w)?;
        parts.push(("frontend.", report_graph(&fe.graph, &[img])?));
    }
    parts.push(("backend.", report_graph(&model.backend.graph, &[high, low])?));
    let mut rows = Vec::new();
    let mut peak = 0;
    for (prefix, rep) in parts {
        peak = peak.max(rep.activation_peak);
        rows.extend(rep.rows.into_iter().map(|r| FlopRow { layer: format!("{prefix}{}", r.layer), ..r }));
    }
    Ok(FlopReport {
        total_macs: rows.iter().map(|r| r.macs).sum(),
        total_params: rows.iter().map(|r| r.params).sum(),
        activation_peak: peak,
        rows,
    })
}
