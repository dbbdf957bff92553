use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

use super::{Mode, Param};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel affine parameters and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNormState<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        let d = Dims { n: 1, c: channels, h: 1, w: 1 };
        BatchNormState {
            gamma: Param::new(Tensor::full(d, T::one())),
            beta: Param::new(Tensor::zeros(d)),
            running_mean: Tensor::zeros(d),
            running_var: Tensor::full(d, T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

/// What the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

pub fn batchnorm_fwd<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let d = input.dims();
    if d.c != state.channels() {
        return Err(Error::Shape(format!("batch norm over {} channels got input {d}", state.channels())));
    }
    let eps = T::from_f64_lossy(BN_EPS);
    let count = d.n * d.plane();
    let mut x_hat = Tensor::zeros(d);
    let mut inv_std = vec![T::zero(); d.c];
    match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batch norm statistics need n*h*w >= 2, got input {d}"
                )));
            }
            let m = T::from_usize_lossy(count);
            let mom = T::from_f64_lossy(BN_MOMENTUM);
            let unbias = m / (m - T::one());
            for c in 0..d.c {
                let mut sum = T::zero();
                for n in 0..d.n {
                    sum += input.plane(n, c).iter().copied().sum::<T>();
                }
                let mean = sum / m;
                let mut sq = T::zero();
                for n in 0..d.n {
                    sq += input.plane(n, c).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                let var = sq / m;
                let is = T::one() / (var + eps).sqrt();
                inv_std[c] = is;
                for n in 0..d.n {
                    for (o, &v) in x_hat.plane_mut(n, c).iter_mut().zip(input.plane(n, c)) {
                        *o = (v - mean) * is;
                    }
                }
                let rm = &mut state.running_mean.data_mut()[c];
                *rm = (T::one() - mom) * *rm + mom * mean;
                let rv = &mut state.running_var.data_mut()[c];
                *rv = (T::one() - mom) * *rv + mom * var * unbias;
            }
        }
        Mode::Infer => {
            for c in 0..d.c {
                let mean = state.running_mean.data()[c];
                let is = T::one() / (state.running_var.data()[c] + eps).sqrt();
                inv_std[c] = is;
                for n in 0..d.n {
                    for (o, &v) in x_hat.plane_mut(n, c).iter_mut().zip(input.plane(n, c)) {
                        *o = (v - mean) * is;
                    }
                }
            }
        }
    }
    let mut out = x_hat.clone();
    for c in 0..d.c {
        let g = state.gamma.value.data()[c];
        let b = state.beta.value.data()[c];
        for n in 0..d.n {
            out.plane_mut(n, c).iter_mut().for_each(|v| *v = g * *v + b);
        }
    }
    Ok((out, BatchNormCache { x_hat, inv_std, mode }))
}

/// Returns the input gradient and accumulates gamma/beta gradients into `state`.
pub fn batchnorm_bwd<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    state: &mut BatchNormState<T>,
) -> Result<Tensor<T>> {
    let d = grad_out.dims();
    if d != cache.x_hat.dims() {
        return Err(Error::Shape(format!("batch norm grad {d} vs cached {}", cache.x_hat.dims())));
    }
    let m = T::from_usize_lossy(d.n * d.plane());
    let mut gin = Tensor::zeros(d);
    for c in 0..d.c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for n in 0..d.n {
            for (&g, &xh) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        state.beta.grad.data_mut()[c] += sum_g;
        state.gamma.grad.data_mut()[c] += sum_gx;
        let gamma = state.gamma.value.data()[c];
        let is = cache.inv_std[c];
        for n in 0..d.n {
            let xh = cache.x_hat.plane(n, c);
            let go = grad_out.plane(n, c);
            let gi = gin.plane_mut(n, c);
            match cache.mode {
                Mode::Train => {
                    let scale = gamma * is / m;
                    for i in 0..gi.len() {
                        gi[i] = scale * (m * go[i] - sum_g - xh[i] * sum_gx);
                    }
                }
                Mode::Infer => {
                    for i in 0..gi.len() {
                        gi[i] = gamma * is * go[i];
                    }
                }
            }
        }
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_closed_form() {
        let x = Tensor::from_vec(Dims::new(1, 1, 1, 3).unwrap(), vec![1.0f64, 2.0, 3.0]).unwrap();
        let mut st = BatchNormState::new(1);
        let (y, _) = batchnorm_fwd(&x, &mut st, Mode::Train).unwrap();
        // var = 2/3; 1/sqrt(2/3 + 1e-5)
        let s = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        for (got, want) in y.data().iter().zip([-s, 0.0, s]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((y.data()[2] - 1.2247).abs() < 1e-4);
        // running stats moved by momentum 0.1 toward mean 2 and unbiased var 1
        assert!((st.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((st.running_var.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_zeroes_output() {
        let x = Tensor::from_vec(Dims::new(2, 1, 1, 2).unwrap(), vec![5.0f32, -1.0, 3.0, 8.0]).unwrap();
        let mut st = BatchNormState::new(1);
        st.gamma.value.fill(0.0);
        for mode in [Mode::Train, Mode::Infer] {
            let (y, _) = batchnorm_fwd(&x, &mut st, mode).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_element_batch_is_degenerate() {
        let x = Tensor::from_vec(Dims::new(1, 2, 1, 1).unwrap(), vec![1.0f32, 2.0]).unwrap();
        let mut st = BatchNormState::new(2);
        assert!(matches!(batchnorm_fwd(&x, &mut st, Mode::Train), Err(Error::DegenerateBatch(_))));
        assert!(batchnorm_fwd(&x, &mut st, Mode::Infer).is_ok());
    }

    #[test]
    fn running_var_stays_positive_on_constant_input() {
        let x = Tensor::full(Dims::new(4, 1, 2, 2).unwrap(), 3.0f32);
        let mut st = BatchNormState::new(1);
        for _ in 0..200 {
            batchnorm_fwd(&x, &mut st, Mode::Train).unwrap();
        }
        assert!(st.running_var.data()[0] > 0.0);
    }
}
