use crate::scalar::Scalar;

/// Heavy-ball momentum without dampening: `v = mu*v + g; w -= lr*v`.
pub fn sgd_momentum_step<T: Scalar>(params: &mut [T], grads: &[T], momentum: &mut [T], lr: T, mu: T) {
    assert!(params.len() == grads.len() && grads.len() == momentum.len(), "sgd buffer lengths differ");
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(momentum.iter_mut()) {
        *v = mu * *v + g;
        *w -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let (mut w, mut v) = ([1.0f64], [0.0f64]);
        sgd_momentum_step(&mut w, &[0.5], &mut v, 0.1, 0.9);
        assert_eq!(v, [0.5]);
        assert!((w[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_decays_geometrically() {
        let (mut w, mut v) = ([0.0f64], [1.0f64]);
        for k in 1..=5 {
            sgd_momentum_step(&mut w, &[0.0], &mut v, 0.1, 0.9);
            assert!((v[0] - 0.9f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_constant_gradient() {
        let (mut w, mut v) = ([0.0f64], [0.0f64]);
        sgd_momentum_step(&mut w, &[1.0], &mut v, 0.1, 0.9);
        assert!((w[0] + 0.1).abs() < 1e-15);
        sgd_momentum_step(&mut w, &[1.0], &mut v, 0.1, 0.9);
        assert!((w[0] + 0.29).abs() < 1e-15);
    }
}
