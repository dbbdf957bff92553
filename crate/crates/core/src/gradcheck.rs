//! Central finite differences for checking hand-written backward passes.
//!
//! Everything here runs in `f64`. The scalar objective is usually a fixed
//! random projection `sum(r * f(x))`, whose analytic gradient is the backward
//! pass seeded with `r`.

use crate::rng::Rng;
use crate::tensor::{Dims, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-3;

/// Numerical gradient of `f` at `x` by central differences.
pub fn numeric_grad(x: &Tensor<f64>, step: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut g = Tensor::zeros(x.dims());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * step);
    }
    g
}

/// Largest elementwise relative error, measured against `max(|a|, |n|, floor)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Error floor below which gradients count as zero; keeps round-off in
/// near-zero entries from dominating the relative error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn check(name: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> Result<f64, String> {
    if analytic.dims() != numeric.dims() {
        return Err(format!("{name}: dims {} vs {}", analytic.dims(), numeric.dims()));
    }
    let err = max_rel_error(analytic.data(), numeric.data(), REL_FLOOR);
    if err <= FD_RTOL {
        Ok(err)
    } else {
        Err(format!("{name}: max relative error {err:.3e} exceeds {FD_RTOL:e}"))
    }
}

/// Inner product used for projected objectives.
pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Random tensor with entries bounded away from zero, so that ReLU kinks
/// are not straddled by the finite-difference step.
pub fn random_away_from_zero(rng: &mut Rng, dims: Dims) -> Tensor<f64> {
    let data = (0..dims.len())
        .map(|_| {
            let m = rng.uniform(0.1, 1.0);
            if rng.coin() { m } else { -m }
        })
        .collect();
    Tensor::from_vec(dims, data).expect("finite")
}

pub fn random_uniform(rng: &mut Rng, dims: Dims) -> Tensor<f64> {
    let data = (0..dims.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::from_vec(dims, data).expect("finite")
}
