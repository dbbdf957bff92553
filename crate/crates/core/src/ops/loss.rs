use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Tensor};

/// Mean softmax cross-entropy over non-ignored pixels, with its gradient.
/// With every pixel ignored the loss is 0 and the gradient is zero.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    ignore_index: u8,
) -> Result<(T, Tensor<T>)> {
    let d = logits.dims();
    if labels.n != d.n || labels.h != d.h || labels.w != d.w {
        return Err(Error::Shape(format!(
            "labels ({},{},{}) vs logits {d}",
            labels.n, labels.h, labels.w
        )));
    }
    let classes = d.c;
    let p = d.plane();
    let mut grad = Tensor::zeros(d);
    let mut total = T::zero();
    let mut count = 0usize;
    let mut probs = vec![T::zero(); classes];
    for n in 0..d.n {
        for (i, &label) in labels.item(n).iter().enumerate() {
            if label == ignore_index {
                continue;
            }
            if label as usize >= classes {
                return Err(Error::Data(format!("label {label} outside [0, {classes}) at pixel {i} of item {n}")));
            }
            let base = n * classes * p + i;
            let mut max = logits.data()[base];
            for c in 1..classes {
                max = max.max(logits.data()[base + c * p]);
            }
            let mut z = T::zero();
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (logits.data()[base + c * p] - max).exp();
                z += *pr;
            }
            total += z.ln() - (logits.data()[base + label as usize * p] - max);
            let g = grad.data_mut();
            for (c, pr) in probs.iter().enumerate() {
                g[base + c * p] = *pr / z;
            }
            g[base + label as usize * p] -= T::one();
            count += 1;
        }
    }
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_usize_lossy(count);
    grad.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Dims, IGNORE_LABEL};

    #[test]
    fn uniform_logits_give_ln2() {
        let x = Tensor::from_vec(Dims::new(1, 2, 1, 1).unwrap(), vec![0.0f64, 0.0]).unwrap();
        let l = LabelMap::new(1, 1, 1, vec![0]).unwrap();
        let (loss, g) = cross_entropy_loss(&x, &l, IGNORE_LABEL).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn all_ignored_is_zero() {
        let x = Tensor::from_vec(Dims::new(1, 3, 1, 2).unwrap(), vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let l = LabelMap::new(1, 1, 2, vec![IGNORE_LABEL; 2]).unwrap();
        let (loss, g) = cross_entropy_loss(&x, &l, IGNORE_LABEL).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 2, 1, 1).unwrap());
        let l = LabelMap::new(1, 1, 1, vec![2]).unwrap();
        assert!(matches!(cross_entropy_loss(&x, &l, IGNORE_LABEL), Err(Error::Data(_))));
    }

    #[test]
    fn large_logits_stay_finite() {
        let x = Tensor::from_vec(Dims::new(1, 2, 1, 1).unwrap(), vec![1000.0f32, -1000.0]).unwrap();
        let l = LabelMap::new(1, 1, 1, vec![1]).unwrap();
        let (loss, g) = cross_entropy_loss(&x, &l, IGNORE_LABEL).unwrap();
        assert!((loss - 2000.0).abs() < 1e-2);
        g.check_finite("grad").unwrap();
    }
}
