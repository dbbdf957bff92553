//! Release-gate checks: reference-oracle agreement, finite-difference
//! gradients, shuffle bijection, FLOP arithmetic and model-file round trips.

use num_rational::Ratio;

use crate::flops::{factorization_ratio, macs_conv, render_floor, report_graph};
use crate::gradcheck::{check, dot, numeric_grad, random_away_from_zero, random_uniform, FD_STEP};
use crate::netgraph::{block_graph, BackendConfig, BlockKind, SegModel, Variant};
use crate::ops::{
    batchnorm_bwd, batchnorm_fwd, bilinear_upsample, bilinear_upsample_bwd, conv2d_bwd, conv2d_fwd, conv2d_naive,
    cross_entropy_loss, depthwise_atrous_conv_bwd, depthwise_atrous_conv_fwd, pixel_shuffle_bwd, pixel_shuffle_fwd,
    pixel_shuffle_fwd_with, pointwise_conv_bwd, pointwise_conv_fwd, relu_bwd, relu_fwd, BatchNormState, ConvSpec,
    Mode, ShuffleLayout,
};
use crate::rng::{kaiming_init, Rng};
use crate::tensor::{Dims, LabelMap, Tensor, IGNORE_LABEL};
use crate::toydata::FrontendConfig;

pub const ORACLE_RATES: [usize; 5] = [1, 2, 6, 12, 18];
pub const ORACLE_TOL: f32 = 1e-6;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    /// Layout used by the shuffle suite; anything but the default must fail.
    pub shuffle_layout: ShuffleLayout,
    pub oracle_cases: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { shuffle_layout: ShuffleLayout::ChannelMajor, oracle_cases: 100 }
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> Vec<SuiteResult> {
    let suite = |name, r: Result<String, String>| match r {
        Ok(detail) => SuiteResult { name, passed: true, detail },
        Err(detail) => SuiteResult { name, passed: false, detail },
    };
    vec![
        suite("oracle-equivalence", oracle_equivalence(opts.oracle_cases, 7).map(|e| format!("max abs error {e:.2e}"))),
        suite("gradient-check", {
            let checks = gradient_suite(11);
            let failed: Vec<String> = checks.iter().filter_map(|(_, r)| r.clone().err()).collect();
            if failed.is_empty() {
                let worst = checks.iter().filter_map(|(_, r)| r.clone().ok()).fold(0.0, f64::max);
                Ok(format!("{} checks, worst relative error {worst:.2e}", checks.len()))
            } else {
                Err(failed.join("; "))
            }
        }),
        suite("shuffle-bijection", shuffle_bijection(opts.shuffle_layout, 40, 3)),
        suite("flop-ratio", flop_ratio()),
        suite("serialization", serialization()),
    ]
}

/// Depthwise atrous conv against the zero-inserted-kernel reference on
/// seeded random cases. Returns the largest absolute difference.
pub fn oracle_equivalence(cases: usize, seed: u64) -> Result<f32, String> {
    let mut worst = 0.0f32;
    for case in 0..cases {
        let mut rng = Rng::stream(seed, case as u64);
        let rate = ORACLE_RATES[case % ORACLE_RATES.len()];
        let c = 1 + rng.below(8);
        let d = Dims { n: 1 + rng.below(2), c, h: 1 + rng.below(16), w: 1 + rng.below(16) };
        let spec = ConvSpec::depthwise(3, rate, c);
        let x: Tensor<f32> = random_uniform(&mut rng, d).cast();
        let w: Tensor<f32> = kaiming_init(&mut rng, spec.weight_dims(), spec.fan_in());
        let fast = depthwise_atrous_conv_fwd(&x, &w, &spec).map_err(|e| e.to_string())?;
        let slow = conv2d_naive(&x, &w, &spec).map_err(|e| e.to_string())?;
        let err = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        if err > ORACLE_TOL {
            return Err(format!("case {case} (rate {rate}, input {d}): max abs error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

type Check = (String, Result<f64, String>);

fn combine(name: &str, parts: Vec<Result<f64, String>>) -> Check {
    let mut worst = 0.0f64;
    for p in parts {
        match p {
            Ok(e) => worst = worst.max(e),
            Err(msg) => return (name.to_string(), Err(msg)),
        }
    }
    (name.to_string(), Ok(worst))
}

fn d(n: usize, c: usize, h: usize, w: usize) -> Dims {
    Dims { n, c, h, w }
}

/// Every hand-written backward pass against central differences in f64,
/// each under a fixed random projection of its output.
pub fn gradient_suite(seed: u64) -> Vec<Check> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // Full / pointwise convolutions, including atrous and strided variants.
    for (name, spec, dims) in [
        ("pointwise_conv", ConvSpec::pointwise(3, 4), d(2, 3, 4, 5)),
        ("conv3x3_atrous", ConvSpec::full(3, 2, 2, 3), d(2, 2, 5, 6)),
        ("conv3x3_strided", ConvSpec::full(3, 1, 2, 3).with_stride(2), d(1, 2, 6, 7)),
    ] {
        let x = random_uniform(&mut rng, dims);
        let w = random_uniform(&mut rng, spec.weight_dims());
        let b = random_uniform(&mut rng, d(1, spec.out_channels, 1, 1));
        let r = random_uniform(&mut rng, spec.out_dims(dims));
        let g = if spec.is_pointwise() {
            pointwise_conv_bwd(&x, &r, &w, true)
        } else {
            conv2d_bwd(&x, &r, &w, true, &spec)
        };
        let g = match g {
            Ok(g) => g,
            Err(e) => {
                out.push((name.to_string(), Err(format!("{name}: {e}"))));
                continue;
            }
        };
        let fwd = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            if spec.is_pointwise() {
                pointwise_conv_fwd(x, w, Some(b)).expect("valid")
            } else {
                conv2d_fwd(x, w, Some(b), &spec).expect("valid")
            }
        };
        let nx = numeric_grad(&x, FD_STEP, |x| dot(&r, &fwd(x, &w, &b)));
        let nw = numeric_grad(&w, FD_STEP, |w| dot(&r, &fwd(&x, w, &b)));
        let nb = numeric_grad(&b, FD_STEP, |b| dot(&r, &fwd(&x, &w, b)));
        out.push(combine(
            name,
            vec![
                check(&format!("{name} input"), &g.input, &nx),
                check(&format!("{name} weight"), &g.weight, &nw),
                check(&format!("{name} bias"), g.bias.as_ref().expect("requested"), &nb),
            ],
        ));
    }

    // Depthwise atrous.
    {
        let spec = ConvSpec::depthwise(3, 2, 3);
        let x = random_uniform(&mut rng, d(2, 3, 5, 6));
        let w = random_uniform(&mut rng, spec.weight_dims());
        let r = random_uniform(&mut rng, x.dims());
        let (gx, gw) = depthwise_atrous_conv_bwd(&x, &r, &w, &spec).expect("valid");
        let nx = numeric_grad(&x, FD_STEP, |x| dot(&r, &depthwise_atrous_conv_fwd(x, &w, &spec).expect("valid")));
        let nw = numeric_grad(&w, FD_STEP, |w| dot(&r, &depthwise_atrous_conv_fwd(&x, w, &spec).expect("valid")));
        out.push(combine(
            "depthwise_atrous_conv",
            vec![check("depthwise input", &gx, &nx), check("depthwise weight", &gw, &nw)],
        ));
    }

    // Batch norm in train mode.
    {
        let x = random_uniform(&mut rng, d(2, 3, 3, 2));
        let mut state = BatchNormState::<f64>::new(3);
        state.gamma.value = random_away_from_zero(&mut rng, d(1, 3, 1, 1));
        state.beta.value = random_uniform(&mut rng, d(1, 3, 1, 1));
        let r = random_uniform(&mut rng, x.dims());
        let base = state.clone();
        let mut s = base.clone();
        let (_, cache) = batchnorm_fwd(&x, &mut s, Mode::Train).expect("valid");
        let gx = batchnorm_bwd(&r, &cache, &mut s).expect("valid");
        let objective = |x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>| {
            let mut st = base.clone();
            st.gamma.value = gamma.clone();
            st.beta.value = beta.clone();
            dot(&r, &batchnorm_fwd(x, &mut st, Mode::Train).expect("valid").0)
        };
        let nx = numeric_grad(&x, FD_STEP, |x| objective(x, &base.gamma.value, &base.beta.value));
        let ng = numeric_grad(&base.gamma.value, FD_STEP, |g| objective(&x, g, &base.beta.value));
        let nb = numeric_grad(&base.beta.value, FD_STEP, |b| objective(&x, &base.gamma.value, b));
        out.push(combine(
            "batchnorm",
            vec![
                check("batchnorm input", &gx, &nx),
                check("batchnorm gamma", &s.gamma.grad, &ng),
                check("batchnorm beta", &s.beta.grad, &nb),
            ],
        ));
    }

    // ReLU, away from the kink.
    {
        let x = random_away_from_zero(&mut rng, d(2, 2, 3, 3));
        let r = random_uniform(&mut rng, x.dims());
        let gx = relu_bwd(&x, &r).expect("valid");
        let nx = numeric_grad(&x, FD_STEP, |x| dot(&r, &relu_fwd(x)));
        out.push(combine("relu", vec![check("relu input", &gx, &nx)]));
    }

    // Pixel shuffle.
    {
        let x = random_uniform(&mut rng, d(1, 8, 2, 3));
        let r = random_uniform(&mut rng, d(1, 2, 4, 6));
        let gx = pixel_shuffle_bwd(&r, 2).expect("valid");
        let nx = numeric_grad(&x, FD_STEP, |x| dot(&r, &pixel_shuffle_fwd(x, 2).expect("valid")));
        out.push(combine("pixel_shuffle", vec![check("pixel_shuffle input", &gx, &nx)]));
    }

    // Bilinear.
    {
        let x = random_uniform(&mut rng, d(1, 2, 3, 4));
        let r = random_uniform(&mut rng, d(1, 2, 9, 12));
        let gx = bilinear_upsample_bwd(&r, 3).expect("valid");
        let nx = numeric_grad(&x, FD_STEP, |x| dot(&r, &bilinear_upsample(x, 3).expect("valid")));
        out.push(combine("bilinear", vec![check("bilinear input", &gx, &nx)]));
    }

    // Cross-entropy, with some ignored pixels.
    {
        let x = random_uniform(&mut rng, d(2, 4, 3, 3)).map(|v| 3.0 * v);
        let labels: Vec<u8> = (0..18).map(|i| if i % 7 == 3 { IGNORE_LABEL } else { rng.below(4) as u8 }).collect();
        let labels = LabelMap::new(2, 3, 3, labels).expect("valid");
        let (_, gx) = cross_entropy_loss(&x, &labels, IGNORE_LABEL).expect("valid");
        let nx = numeric_grad(&x, FD_STEP, |x| cross_entropy_loss(x, &labels, IGNORE_LABEL).expect("valid").0);
        out.push(combine("cross_entropy", vec![check("cross_entropy logits", &gx, &nx)]));
    }

    out.push(tiny_graph_check(&mut rng));
    out
}

/// Front-end + cf_aspp_sr back-end + loss, all parameters and the image.
fn tiny_graph_check(rng: &mut Rng) -> Check {
    let fc = FrontendConfig { in_channels: 3, widths: vec![3, 4, 4], low_tap: 0 };
    let bc = BackendConfig {
        variant: Variant::CfAsppSr,
        num_classes: 3,
        aspp_rates: vec![1, 2],
        high_channels: 4,
        low_channels: 3,
        faspp1_channels: 3,
        faspp2_channels: 2,
        lowlevel_proj_channels: 2,
        shuffle1_t: 4,
        shuffle2_t: 2,
        final_bilinear_t: 2,
        high_stride: 16,
        low_stride: 4,
    };
    let mut model = match SegModel::<f64>::new(Some(&fc), &bc, rng.next_u64()) {
        Ok(m) => m,
        Err(e) => return ("tiny_graph".into(), Err(e.to_string())),
    };
    let images = random_uniform(rng, d(2, 3, 16, 16));
    let labels = LabelMap::new(2, 32, 32, (0..2 * 32 * 32).map(|_| rng.below(3) as u8).collect()).expect("valid");

    let loss_of = |m: &mut SegModel<f64>, x: &Tensor<f64>| -> f64 {
        let logits = m.forward(x, Mode::Train).expect("valid");
        cross_entropy_loss(&logits, &labels, IGNORE_LABEL).expect("valid").0
    };

    model.zero_grad();
    let logits = model.forward(&images, Mode::Train).expect("valid");
    let (_, g) = cross_entropy_loss(&logits, &labels, IGNORE_LABEL).expect("valid");
    let g_img = model.backward(&g).expect("valid").expect("front-end present");
    let analytic: Vec<Tensor<f64>> = model.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut parts = vec![check("tiny_graph image", &g_img, &numeric_grad(&images, FD_STEP, |x| loss_of(&mut model, x)))];
    for (i, a) in analytic.iter().enumerate() {
        let value = model.params_mut()[i].value.clone();
        let num = numeric_grad(&value, FD_STEP, |v| {
            model.params_mut()[i].value = v.clone();
            loss_of(&mut model, &images)
        });
        model.params_mut()[i].value = value;
        parts.push(check(&format!("tiny_graph parameter {i}"), a, &num));
    }
    combine("tiny_graph", parts)
}

/// Forward shuffle (in the given layout) followed by the reference backward
/// permutation must reproduce the input bit for bit.
pub fn shuffle_bijection(layout: ShuffleLayout, cases: usize, seed: u64) -> Result<String, String> {
    for case in 0..cases {
        let mut rng = Rng::stream(seed, case as u64);
        let t = 1 + case % 4;
        let dims = d(1 + rng.below(2), (1 + rng.below(3)) * t * t, 1 + rng.below(5), 1 + rng.below(5));
        let x: Tensor<f32> = random_uniform(&mut rng, dims).cast();
        let y = pixel_shuffle_fwd_with(&x, t, layout).map_err(|e| e.to_string())?;
        let back = pixel_shuffle_bwd(&y, t).map_err(|e| e.to_string())?;
        let same = back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("case {case}: t = {t}, input {dims} is not restored"));
        }
    }
    Ok(format!("{cases} cases, t in 1..=4"))
}

pub fn flop_ratio() -> Result<String, String> {
    let r = factorization_ratio(512, 256, 3);
    if r != Ratio::new(1_179_648, 133_376) {
        return Err(format!("ratio {r} != 1179648/133376"));
    }
    if render_floor(r, 1) != "8.8" {
        return Err(format!("ratio renders as {}", render_floor(r, 1)));
    }
    let g = block_graph::<f32>(BlockKind::Factorized, 512, 256, &[6, 12, 18], 0).map_err(|e| e.to_string())?;
    let rep = report_graph(&g, &[d(1, 512, 1, 1)]).map_err(|e| e.to_string())?;
    let convs: u64 = rep.rows.iter().filter(|r| r.kind != "batchnorm").map(|r| r.macs).sum();
    let want = macs_conv(1, 1, 1, 1, 512, 256, false)
        + 3 * macs_conv(1, 1, 3, 3, 256, 256, true)
        + macs_conv(1, 1, 1, 1, 768, 256, false);
    if convs != want {
        return Err(format!("F-ASPP block reports {convs} MACs, formula gives {want}"));
    }
    Ok(format!("{r} = {}", crate::flops::render_rounded(r, 3)))
}

pub fn serialization() -> Result<String, String> {
    let fc = FrontendConfig { in_channels: 3, widths: vec![4, 6, 8], low_tap: 0 };
    let bc = BackendConfig {
        variant: Variant::CfAsppSr,
        num_classes: 3,
        aspp_rates: vec![1, 2],
        high_channels: 8,
        low_channels: 4,
        faspp1_channels: 6,
        faspp2_channels: 4,
        lowlevel_proj_channels: 2,
        shuffle1_t: 4,
        shuffle2_t: 2,
        final_bilinear_t: 2,
        high_stride: 16,
        low_stride: 4,
    };
    let mut model = SegModel::<f32>::new(Some(&fc), &bc, 3).map_err(|e| e.to_string())?;
    let x: Tensor<f32> = random_uniform(&mut Rng::new(5), d(1, 3, 16, 24)).cast();
    // a training step so running statistics differ from their init
    let logits = model.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
    model.backward(&logits.map(|v| v * 1e-3)).map_err(|e| e.to_string())?;
    model.sgd_step(0.1, 0.9);
    let bytes = model.to_bytes();
    let mut loaded = SegModel::<f32>::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if loaded.to_bytes() != bytes {
        return Err("save -> load -> save changed the bytes".into());
    }
    let a = model.forward(&x, Mode::Infer).map_err(|e| e.to_string())?;
    let b = loaded.forward(&x, Mode::Infer).map_err(|e| e.to_string())?;
    if a.data().iter().zip(b.data()).any(|(p, q)| p.to_bits() != q.to_bits()) {
        return Err("loaded model's forward differs".into());
    }
    let mut bad = bytes.clone();
    bad[1] ^= 0xff;
    if SegModel::<f32>::from_bytes(&bad).is_ok() {
        return Err("corrupted magic accepted".into());
    }
    for cut in [8, bytes.len() / 2, bytes.len() - 1] {
        if SegModel::<f32>::from_bytes(&bytes[..cut]).is_ok() {
            return Err(format!("file truncated to {cut} bytes accepted"));
        }
    }
    Ok(format!("{} bytes round-trip", bytes.len()))
}
