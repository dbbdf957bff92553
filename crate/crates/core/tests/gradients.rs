use segsr::selftest::{gradient_suite, oracle_equivalence};

#[test]
fn every_backward_matches_finite_differences() {
    let checks = gradient_suite(11);
    let names: Vec<&str> = checks.iter().map(|(n, _)| n.as_str()).collect();
    for want in [
        "pointwise_conv",
        "conv3x3_atrous",
        "conv3x3_strided",
        "depthwise_atrous_conv",
        "batchnorm",
        "relu",
        "pixel_shuffle",
        "bilinear",
        "cross_entropy",
        "tiny_graph",
    ] {
        assert!(names.contains(&want), "missing check {want}");
    }
    for (name, r) in &checks {
        assert!(r.is_ok(), "{name}: {}", r.as_ref().unwrap_err());
    }
}

#[test]
fn gradient_suite_is_seed_robust() {
    for seed in [1, 2, 3] {
        for (name, r) in gradient_suite(seed) {
            assert!(r.is_ok(), "seed {seed}, {name}: {}", r.unwrap_err());
        }
    }
}

#[test]
fn depthwise_matches_zero_inserted_reference() {
    let err = oracle_equivalence(100, 21).unwrap();
    assert!(err <= 1e-6);
}
