use segsr::flops::{macs_conv, report_graph};
use segsr::netgraph::{
    build_backend, build_faspp_block, load_model, save_model, BackendConfig, GraphBuilder, Layer, SegModel, Variant,
};
use segsr::ops::Mode;
use segsr::rng::{kaiming_init, Rng};
use segsr::toydata::FrontendConfig;
use segsr::{Dims, Error, Tensor};

/// High-level features at stride 16, low-level at stride 4, 4 classes.
fn toy(variant: Variant) -> BackendConfig {
    BackendConfig {
        variant,
        num_classes: 4,
        aspp_rates: vec![1, 2, 4],
        high_channels: 16,
        low_channels: 8,
        faspp1_channels: 8,
        faspp2_channels: 4,
        lowlevel_proj_channels: 4,
        shuffle1_t: 4,
        shuffle2_t: 2,
        final_bilinear_t: 2,
        high_stride: 16,
        low_stride: 4,
    }
}

fn features(seed: u64, n: usize) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = Rng::new(seed);
    let high = kaiming_init(&mut rng, Dims::new(n, 16, 8, 16).unwrap(), 1);
    let low = kaiming_init(&mut rng, Dims::new(n, 8, 32, 64).unwrap(), 1);
    (high, low)
}

#[test]
fn toy_features_reach_label_resolution() {
    for v in Variant::ALL {
        let mut g = build_backend::<f32>(&toy(v), 3).unwrap();
        let (high, low) = features(1, 1);
        let logits = g.forward(&high, &low, Mode::Infer).unwrap();
        assert_eq!(logits.dims(), Dims::new(1, 4, 128, 256).unwrap(), "{v}");
    }
}

#[test]
fn infer_is_deterministic_and_low_level_path_is_live() {
    let mut g = build_backend::<f32>(&toy(Variant::CfAsppSr), 3).unwrap();
    let (high, low) = features(1, 1);
    let a = g.forward(&high, &low, Mode::Infer).unwrap();
    let b = g.forward(&high, &low, Mode::Infer).unwrap();
    assert_eq!(a, b);
    let c = g.forward(&high, &Tensor::zeros(low.dims()), Mode::Infer).unwrap();
    assert_ne!(a, c);
}

#[test]
fn backward_before_forward_is_a_state_error() {
    let mut g = build_backend::<f32>(&toy(Variant::CfAsppSr), 3).unwrap();
    let grad = Tensor::zeros(Dims::new(1, 4, 128, 256).unwrap());
    assert!(matches!(g.backward(&grad), Err(Error::State(_))));
}

#[test]
fn zero_output_grad_gives_zero_param_grads_and_grads_are_deterministic() {
    let run = |scale: f32| {
        let mut g = build_backend::<f32>(&toy(Variant::CfAsppSr), 3).unwrap();
        let (high, low) = features(2, 2);
        let logits = g.forward(&high, &low, Mode::Train).unwrap();
        g.backward(&logits.map(|v| v * scale)).unwrap();
        g.graph.grads().into_iter().map(|(n, t)| (n, t.clone())).collect::<Vec<_>>()
    };
    for (name, t) in run(0.0) {
        assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
    }
    let a = run(1.0);
    let b = run(1.0);
    assert_eq!(a, b);
    assert!(a.iter().any(|(_, t)| t.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn upsampling_paths_are_shape_interchangeable() {
    let slot_dims = |v: Variant| {
        let g = build_backend::<f32>(&toy(v), 0).unwrap();
        let (h, l) = features(0, 1);
        let dims = g.graph.infer_dims(&[h.dims(), l.dims()]).unwrap();
        let named = |name: &str| {
            let node = g.graph.nodes().iter().find(|n| n.name == name).unwrap();
            dims[node.output.index()]
        };
        (named("fusion.concat"), named("faspp2.fuse.relu"), dims[g.graph.output_slots()[0].index()])
    };
    assert_eq!(slot_dims(Variant::CfAsppSr), slot_dims(Variant::BilinearBaseline));
    assert_eq!(slot_dims(Variant::CfAsppSr), slot_dims(Variant::CfAspp));
}

#[test]
fn factorized_variant_has_fewer_params_than_full_aspp() {
    let p = |v| build_backend::<f32>(&BackendConfig { variant: v, ..Default::default() }, 0).unwrap().graph.param_count();
    assert!(p(Variant::FAspp) < p(Variant::AsppFull));
    assert!(p(Variant::CfAspp) < p(Variant::AsppFull));
}

#[test]
fn conv_rows_match_formula_on_recorded_dims() {
    let g = build_backend::<f32>(&BackendConfig::default(), 0).unwrap();
    let inputs = [Dims::new(1, 512, 4, 8).unwrap(), Dims::new(1, 128, 16, 32).unwrap()];
    let rep = report_graph(&g.graph, &inputs).unwrap();
    for (node, row) in g.graph.nodes().iter().zip(&rep.rows) {
        assert_eq!(node.name, row.layer);
        if let Layer::Conv { spec, .. } = &node.layer {
            let want = macs_conv(
                row.out.h as u64,
                row.out.w as u64,
                spec.kernel.0 as u64,
                spec.kernel.1 as u64,
                spec.in_channels as u64,
                spec.out_channels as u64,
                spec.depthwise,
            );
            assert_eq!(row.macs, want, "{}", node.name);
        }
    }
}

#[test]
fn rate_one_faspp_with_identity_weights_is_identity_up_to_bn() {
    let c = 3;
    let mut b = GraphBuilder::<f64>::new(0);
    let x = b.input(c);
    let y = build_faspp_block(&mut b, "f", x, c, c, &[1]).unwrap();
    let mut g = b.finish(&[y]);
    for node in g.nodes_mut() {
        if let Layer::Conv { spec, weight, .. } = &mut node.layer {
            weight.value.fill(0.0);
            for o in 0..spec.out_channels {
                let i = if spec.depthwise { 0 } else { o };
                let (cy, cx) = (spec.kernel.0 / 2, spec.kernel.1 / 2);
                *weight.value.at_mut(o, i, cy, cx) = 1.0;
            }
        }
    }
    let mut rng = Rng::new(4);
    let input = Tensor::from_vec(Dims::new(1, c, 5, 6).unwrap(), (0..90).map(|_| rng.uniform(0.0, 2.0)).collect()).unwrap();
    let out = g.forward(&[&input], Mode::Infer).unwrap().pop().unwrap();
    // three BN layers with unit running variance each scale by 1/sqrt(1 + eps)
    let scale = (1.0f64 + 1e-5).powf(-1.5);
    for (a, b) in out.data().iter().zip(input.data()) {
        assert!((a - b * scale).abs() < 1e-12);
    }
}

#[test]
fn model_files_round_trip_and_reject_corruption() {
    let fc = FrontendConfig { in_channels: 3, widths: vec![4, 8, 8, 8, 16], low_tap: 1 };
    let bc = BackendConfig {
        high_channels: 16,
        low_channels: 8,
        high_stride: 32,
        low_stride: 4,
        shuffle1_t: 8,
        shuffle2_t: 2,
        final_bilinear_t: 2,
        ..toy(Variant::CfAsppSr)
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.segsr");
    let mut m = SegModel::<f32>::new(Some(&fc), &bc, 9).unwrap();
    save_model(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..7], b"SEGSR1\0");
    let mut back = load_model::<f32>(&path).unwrap();
    let again = dir.path().join("again.segsr");
    save_model(&back, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);

    let img = Tensor::full(Dims::new(1, 3, 32, 64).unwrap(), 0.3f32);
    let a = m.forward(&img, Mode::Infer).unwrap();
    let b = back.forward(&img, Mode::Infer).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let mut bad = bytes.clone();
    bad[3] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_model::<f32>(&path), Err(Error::Format(_))));
    // dims claiming more data than the file holds
    let mut huge = bytes.clone();
    let name_len = u16::from_le_bytes([huge[11], huge[12]]) as usize;
    let dim_at = 11 + 2 + name_len + 2;
    huge[dim_at..dim_at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(SegModel::<f32>::from_bytes(&huge), Err(Error::Format(_))));
}
