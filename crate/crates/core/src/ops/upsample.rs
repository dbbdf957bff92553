//! Parameter-free bilinear upsampling, align-corners convention.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

/// Source taps `(i0, i1, frac)` for every destination index along one axis.
fn axis_taps<T: Scalar>(len_in: usize, len_out: usize) -> Vec<(usize, usize, T)> {
    (0..len_out)
        .map(|dst| {
            if len_in == 1 || len_out == 1 {
                return (0, 0, T::zero());
            }
            // exact rational position dst * (in-1) / (out-1)
            let num = dst * (len_in - 1);
            let den = len_out - 1;
            let i0 = num / den;
            let frac = T::from_usize_lossy(num % den) / T::from_usize_lossy(den);
            (i0, (i0 + 1).min(len_in - 1), frac)
        })
        .collect()
}

pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    if t == 0 {
        return Err(Error::Spec("upsample factor must be >= 1".into()));
    }
    let d = input.dims();
    if t == 1 {
        return Ok(input.clone());
    }
    let od = Dims { h: d.h * t, w: d.w * t, ..d };
    let ty = axis_taps::<T>(d.h, od.h);
    let tx = axis_taps::<T>(d.w, od.w);
    let mut out = Tensor::zeros(od);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                let r0 = &src[y0 * d.w..(y0 + 1) * d.w];
                let r1 = &src[y1 * d.w..(y1 + 1) * d.w];
                let drow = &mut dst[y * od.w..(y + 1) * od.w];
                for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    drow[x] = top + (bot - top) * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_upsample`].
pub fn bilinear_upsample_bwd<T: Scalar>(grad_out: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let od = grad_out.dims();
    if t == 0 || od.h % t != 0 || od.w % t != 0 {
        return Err(Error::Shape(format!("{od} is not a multiple of the factor {t}")));
    }
    if t == 1 {
        return Ok(grad_out.clone());
    }
    let d = Dims { h: od.h / t, w: od.w / t, ..od };
    let ty = axis_taps::<T>(d.h, od.h);
    let tx = axis_taps::<T>(d.w, od.w);
    let mut gin = Tensor::zeros(d);
    let one = T::one();
    for n in 0..d.n {
        for c in 0..d.c {
            let go = grad_out.plane(n, c);
            let gi = gin.plane_mut(n, c);
            for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let g = go[y * od.w + x];
                    gi[y0 * d.w + x0] += g * (one - fy) * (one - fx);
                    gi[y0 * d.w + x1] += g * (one - fy) * fx;
                    gi[y1 * d.w + x0] += g * fy * (one - fx);
                    gi[y1 * d.w + x1] += g * fy * fx;
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
    fn two_by_two_closed_form() {
        let x = Tensor::from_vec(Dims::new(1, 1, 2, 2).unwrap(), vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 4, 4).unwrap());
        let row0 = &y.data()[0..4];
        for (got, want) in row0.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        // f(y, x) = 2*y_src + x_src is linear, so interpolation is exact
        for yy in 0..4 {
            for xx in 0..4 {
                let want = 2.0 * yy as f64 / 3.0 + xx as f64 / 3.0;
                assert!((y.at(0, 0, yy, xx) - want).abs() < 1e-12);
            }
        }
        assert_eq!(y.at(0, 0, 3, 3), 3.0);
        assert_eq!(y.at(0, 0, 3, 0), 2.0);
    }

    #[test]
    fn constant_stays_constant_and_unit_factor_is_identity() {
        let x = Tensor::full(Dims::new(2, 2, 3, 5).unwrap(), 0.7f32);
        let y = bilinear_upsample(&x, 3).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);
    }

    #[test]
    fn single_pixel_broadcasts() {
        let x = Tensor::from_vec(Dims::new(1, 1, 1, 1).unwrap(), vec![4.0f32]).unwrap();
        let y = bilinear_upsample(&x, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 4.0));
        let g = bilinear_upsample_bwd(&Tensor::full(y.dims(), 1.0f32), 4).unwrap();
        assert_eq!(g.data(), &[16.0]);
    }

    #[test]
    fn adjoint_identity() {
        // <up(x), g> == <x, up^T(g)>
        let mut rng = crate::rng::Rng::new(3);
        let x: Tensor<f64> = crate::rng::kaiming_init(&mut rng, Dims::new(1, 2, 3, 4).unwrap(), 1);
        let g: Tensor<f64> = crate::rng::kaiming_init(&mut rng, Dims::new(1, 2, 9, 12).unwrap(), 1);
        let y = bilinear_upsample(&x, 3).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gx = bilinear_upsample_bwd(&g, 3).unwrap();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
