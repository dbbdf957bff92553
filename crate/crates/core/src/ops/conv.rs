//! Convolutions: full (optionally strided/atrous), depthwise atrous, pointwise,
//! plus the brute-force zero-inserted-kernel reference.

use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::{Dims, Tensor};

/// Geometry of a convolution layer. Padding is always "same" zero padding of
/// `rate * (k - 1) / 2` per side, so stride 1 preserves spatial extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub rate: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depthwise: bool,
    pub stride: usize,
}

impl ConvSpec {
    pub fn full(k: usize, rate: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec { kernel: (k, k), rate, in_channels, out_channels, depthwise: false, stride: 1 }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec::full(1, 1, in_channels, out_channels)
    }

    pub fn depthwise(k: usize, rate: usize, channels: usize) -> Self {
        ConvSpec { kernel: (k, k), rate, in_channels: channels, out_channels: channels, depthwise: true, stride: 1 }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        ConvSpec { stride, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Spec(format!("kernel {kh}x{kw} must be odd and non-empty")));
        }
        if self.rate < 1 {
            return Err(Error::Spec("atrous rate must be >= 1".into()));
        }
        if self.stride < 1 {
            return Err(Error::Spec("stride must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Spec("channel counts must be >= 1".into()));
        }
        if self.depthwise && self.in_channels != self.out_channels {
            return Err(Error::Spec(format!(
                "depthwise conv needs equal channels, got {} -> {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn is_pointwise(&self) -> bool {
        !self.depthwise && self.kernel == (1, 1) && self.stride == 1
    }

    /// Extent covered by one dilated kernel along each axis.
    pub fn field_of_view(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        (kh + (kh - 1) * (self.rate - 1), kw + (kw - 1) * (self.rate - 1))
    }

    pub fn padding(&self) -> (usize, usize) {
        let (fh, fw) = self.field_of_view();
        ((fh - 1) / 2, (fw - 1) / 2)
    }

    pub fn weight_dims(&self) -> Dims {
        let (kh, kw) = self.kernel;
        let ci = if self.depthwise { 1 } else { self.in_channels };
        Dims { n: self.out_channels, c: ci, h: kh, w: kw }
    }

    pub fn fan_in(&self) -> usize {
        let (kh, kw) = self.kernel;
        kh * kw * if self.depthwise { 1 } else { self.in_channels }
    }

    pub fn out_dims(&self, input: Dims) -> Dims {
        Dims {
            n: input.n,
            c: self.out_channels,
            h: input.h.div_ceil(self.stride),
            w: input.w.div_ceil(self.stride),
        }
    }

    fn check(&self, input: Dims, weight: Dims) -> Result<()> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::Shape(format!("input has {} channels, spec expects {}", input.c, self.in_channels)));
        }
        if weight != self.weight_dims() {
            return Err(Error::Shape(format!("weights {weight} do not match spec {}", self.weight_dims())));
        }
        Ok(())
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(Error::Shape(format!("bias has {} values for {channels} channels", b.len())));
        }
    }
    Ok(())
}

/// Direct convolution (cross-correlation) with the kernel explicitly dilated
/// by inserting `rate - 1` zeros between taps. Reference implementation for
/// tests; quadratic in everything.
pub fn conv2d_naive<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let d = input.dims();
    spec.check(d, weights.dims())?;
    let (kh, kw) = spec.kernel;
    let (fh, fw) = spec.field_of_view();
    let wd = weights.dims();

    // Zero-inserted kernel of size fh x fw.
    let mut dilated = Tensor::zeros(Dims { n: wd.n, c: wd.c, h: fh, w: fw });
    for o in 0..wd.n {
        for i in 0..wd.c {
            for a in 0..kh {
                for b in 0..kw {
                    *dilated.at_mut(o, i, a * spec.rate, b * spec.rate) = weights.at(o, i, a, b);
                }
            }
        }
    }

    let (ph, pw) = spec.padding();
    let od = spec.out_dims(d);
    let mut out = Tensor::zeros(od);
    for n in 0..od.n {
        for o in 0..od.c {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut acc = T::zero();
                    let inputs: Vec<(usize, usize)> = if spec.depthwise {
                        vec![(o, 0)]
                    } else {
                        (0..d.c).map(|i| (i, i)).collect()
                    };
                    for (ic, wc) in inputs {
                        for a in 0..fh {
                            for b in 0..fw {
                                let iy = (oy * spec.stride + a) as isize - ph as isize;
                                let ix = (ox * spec.stride + b) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                    continue;
                                }
                                acc += dilated.at(o, wc, a, b) * input.at(n, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    *out.at_mut(n, o, oy, ox) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Valid output range `[lo, hi)` along one axis for a tap at offset `off`:
/// those `o` with `0 <= o*stride + off < len`.
#[inline]
fn tap_range(off: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = if (len as isize) - off <= 0 { 0 } else { ((len as isize - off) + s - 1) / s };
    let lo = lo.max(0) as usize;
    let hi = (hi.max(0) as usize).min(out_len);
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(item: &[T], d: Dims, spec: &ConvSpec, od: Dims, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding();
    let p = od.plane();
    cols.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..d.c {
        let plane = &item[ci * d.plane()..(ci + 1) * d.plane()];
        for ky in 0..kh {
            let offy = (ky * spec.rate) as isize - ph as isize;
            let (y0, y1) = tap_range(offy, spec.stride, d.h, od.h);
            for kx in 0..kw {
                let offx = (kx * spec.rate) as isize - pw as isize;
                let (x0, x1) = tap_range(offx, spec.stride, d.w, od.w);
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let iy = (oy * spec.stride) as isize + offy;
                    let src_row = iy as usize * d.w;
                    for ox in x0..x1 {
                        let ix = ((ox * spec.stride) as isize + offx) as usize;
                        dst[oy * od.w + ox] = plane[src_row + ix];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: Dims, spec: &ConvSpec, od: Dims, item: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding();
    let p = od.plane();
    for ci in 0..d.c {
        let plane = &mut item[ci * d.plane()..(ci + 1) * d.plane()];
        for ky in 0..kh {
            let offy = (ky * spec.rate) as isize - ph as isize;
            let (y0, y1) = tap_range(offy, spec.stride, d.h, od.h);
            for kx in 0..kw {
                let offx = (kx * spec.rate) as isize - pw as isize;
                let (x0, x1) = tap_range(offx, spec.stride, d.w, od.w);
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let iy = (oy * spec.stride) as isize + offy;
                    let dst_row = iy as usize * d.w;
                    for ox in x0..x1 {
                        let ix = ((ox * spec.stride) as isize + offx) as usize;
                        plane[dst_row + ix] += src[oy * od.w + ox];
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut Tensor<T>, bias: Option<&Tensor<T>>) {
    if let Some(b) = bias {
        let d = out.dims();
        for n in 0..d.n {
            for c in 0..d.c {
                let bv = b.data()[c];
                out.plane_mut(n, c).iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let d = grad_out.dims();
    let mut g = vec![T::zero(); d.c];
    for n in 0..d.n {
        for (c, gc) in g.iter_mut().enumerate() {
            *gc += grad_out.plane(n, c).iter().copied().sum::<T>();
        }
    }
    Tensor::from_raw(Dims { n: 1, c: d.c, h: 1, w: 1 }, g)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Full (channel-mixing) convolution through im2col and a matrix product.
pub fn conv2d_fwd<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let d = input.dims();
    spec.check(d, weight.dims())?;
    if spec.depthwise {
        return Err(Error::Spec("conv2d_fwd called with a depthwise spec".into()));
    }
    check_bias(bias, spec.out_channels)?;
    if spec.is_pointwise() {
        return pointwise_conv_fwd(input, weight, bias);
    }
    let od = spec.out_dims(d);
    let k = spec.fan_in();
    let p = od.plane();
    let mut cols = vec![T::zero(); k * p];
    let mut out = Tensor::zeros(od);
    for n in 0..d.n {
        im2col(input.item(n), d, spec, od, &mut cols);
        matmul(false, false, od.c, p, k, weight.data(), &cols, T::zero(), out.item_mut(n));
    }
    add_bias(&mut out, bias);
    Ok(out)
}

pub fn conv2d_bwd<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let d = input.dims();
    spec.check(d, weight.dims())?;
    if spec.is_pointwise() {
        return pointwise_conv_bwd(input, grad_out, weight, has_bias);
    }
    let od = spec.out_dims(d);
    if grad_out.dims() != od {
        return Err(Error::Shape(format!("grad {} vs conv output {od}", grad_out.dims())));
    }
    let k = spec.fan_in();
    let p = od.plane();
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    let mut gw = Tensor::zeros(weight.dims());
    let mut gin = Tensor::zeros(d);
    for n in 0..d.n {
        im2col(input.item(n), d, spec, od, &mut cols);
        let go = grad_out.item(n);
        matmul(false, true, od.c, k, p, go, &cols, T::one(), gw.data_mut());
        matmul(true, false, k, p, od.c, weight.data(), go, T::zero(), &mut dcols);
        col2im(&dcols, d, spec, od, gin.item_mut(n));
    }
    Ok(ConvGrads { input: gin, weight: gw, bias: has_bias.then(|| bias_grad(grad_out)) })
}

/// 1x1 convolution: `out(n,o,y,x) = sum_i w(o,i) * in(n,i,y,x) + bias(o)`.
pub fn pointwise_conv_fwd<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let d = input.dims();
    let wd = weight.dims();
    if wd.c != d.c || wd.h != 1 || wd.w != 1 {
        return Err(Error::Shape(format!("pointwise weights {wd} for input {d}")));
    }
    check_bias(bias, wd.n)?;
    let od = d.with_c(wd.n);
    let mut out = Tensor::zeros(od);
    for n in 0..d.n {
        matmul(false, false, wd.n, d.plane(), d.c, weight.data(), input.item(n), T::zero(), out.item_mut(n));
    }
    add_bias(&mut out, bias);
    Ok(out)
}

pub fn pointwise_conv_bwd<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
) -> Result<ConvGrads<T>> {
    let d = input.dims();
    let wd = weight.dims();
    if wd.c != d.c || grad_out.dims() != d.with_c(wd.n) {
        return Err(Error::Shape(format!("pointwise grad {} for input {d}, weights {wd}", grad_out.dims())));
    }
    let p = d.plane();
    let mut gw = Tensor::zeros(wd);
    let mut gin = Tensor::zeros(d);
    for n in 0..d.n {
        let go = grad_out.item(n);
        matmul(false, true, wd.n, d.c, p, go, input.item(n), T::one(), gw.data_mut());
        matmul(true, false, d.c, p, wd.n, weight.data(), go, T::zero(), gin.item_mut(n));
    }
    Ok(ConvGrads { input: gin, weight: gw, bias: has_bias.then(|| bias_grad(grad_out)) })
}

fn depthwise_check(d: Dims, weight: Dims, spec: &ConvSpec) -> Result<()> {
    if !spec.depthwise {
        return Err(Error::Spec("depthwise op needs a depthwise spec".into()));
    }
    spec.check(d, weight)
}

/// One atrous filter per channel; taps at offsets `rate * (k - (K-1)/2)`.
pub fn depthwise_atrous_conv_fwd<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let d = input.dims();
    depthwise_check(d, weight.dims(), spec)?;
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding();
    let od = spec.out_dims(d);
    let s = spec.stride;
    let mut out = Tensor::zeros(od);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = input.plane(n, c);
            let k = weight.item(c);
            let dst = out.plane_mut(n, c);
            for ky in 0..kh {
                let offy = (ky * spec.rate) as isize - ph as isize;
                let (y0, y1) = tap_range(offy, s, d.h, od.h);
                for kx in 0..kw {
                    let tap = k[ky * kw + kx];
                    let offx = (kx * spec.rate) as isize - pw as isize;
                    let (x0, x1) = tap_range(offx, s, d.w, od.w);
                    for oy in y0..y1 {
                        let iy = ((oy * s) as isize + offy) as usize;
                        let srow = &src[iy * d.w..(iy + 1) * d.w];
                        let drow = &mut dst[oy * od.w..(oy + 1) * od.w];
                        for ox in x0..x1 {
                            let ix = ((ox * s) as isize + offx) as usize;
                            drow[ox] += tap * srow[ix];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight)`.
pub fn depthwise_atrous_conv_bwd<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = input.dims();
    depthwise_check(d, weight.dims(), spec)?;
    let od = spec.out_dims(d);
    if grad_out.dims() != od {
        return Err(Error::Shape(format!("grad {} vs depthwise output {od}", grad_out.dims())));
    }
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding();
    let s = spec.stride;
    let mut gin = Tensor::zeros(d);
    let mut gw = Tensor::zeros(weight.dims());
    for n in 0..d.n {
        for c in 0..d.c {
            let src = input.plane(n, c);
            let go = grad_out.plane(n, c);
            let k = weight.item(c).to_vec();
            let mut kgrad = vec![T::zero(); kh * kw];
            let gi = gin.plane_mut(n, c);
            for ky in 0..kh {
                let offy = (ky * spec.rate) as isize - ph as isize;
                let (y0, y1) = tap_range(offy, s, d.h, od.h);
                for kx in 0..kw {
                    let tap = k[ky * kw + kx];
                    let offx = (kx * spec.rate) as isize - pw as isize;
                    let (x0, x1) = tap_range(offx, s, d.w, od.w);
                    let mut acc = T::zero();
                    for oy in y0..y1 {
                        let iy = ((oy * s) as isize + offy) as usize;
                        for ox in x0..x1 {
                            let ix = ((ox * s) as isize + offx) as usize;
                            let g = go[oy * od.w + ox];
                            gi[iy * d.w + ix] += tap * g;
                            acc += src[iy * d.w + ix] * g;
                        }
                    }
                    kgrad[ky * kw + kx] = acc;
                }
            }
            for (dst, v) in gw.item_mut(c).iter_mut().zip(kgrad) {
                *dst += v;
            }
        }
    }
    Ok((gin, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{kaiming_init, Rng};

    fn row5() -> Tensor<f32> {
        Tensor::from_vec(Dims::new(1, 1, 1, 5).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()
    }

    fn middle_row_kernel() -> Tensor<f32> {
        let mut k = vec![0.0f32; 9];
        k[3] = 1.0;
        k[5] = -1.0;
        Tensor::from_vec(Dims::new(1, 1, 3, 3).unwrap(), k).unwrap()
    }

    #[test]
    fn tap_range_bounds() {
        // stride 1, offset -2 on len 5: outputs 2..5 read inputs 0..3
        assert_eq!(tap_range(-2, 1, 5, 5), (2, 5));
        assert_eq!(tap_range(2, 1, 5, 5), (0, 3));
        assert_eq!(tap_range(18, 1, 5, 5), (0, 0));
        // stride 2, offset -1 on len 8 (out 4): o*2-1 >= 0 => o >= 1
        assert_eq!(tap_range(-1, 2, 8, 4), (1, 4));
        assert_eq!(tap_range(1, 2, 8, 4), (0, 4));
    }

    #[test]
    fn naive_hand_example() {
        // Dilated middle row [1,0,0,0,-1]: out[x] = in[x-2] - in[x+2] with zeros outside.
        let spec = ConvSpec::depthwise(3, 2, 1);
        let out = conv2d_naive(&row5(), &middle_row_kernel(), &spec).unwrap();
        assert_eq!(out.data(), &[-3.0, -4.0, -4.0, 2.0, 3.0]);
    }

    #[test]
    fn depthwise_hand_example() {
        let spec = ConvSpec::depthwise(3, 2, 1);
        let out = depthwise_atrous_conv_fwd(&row5(), &middle_row_kernel(), &spec).unwrap();
        assert_eq!(out.data(), &[-3.0, -4.0, -4.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_and_zero_kernels() {
        let x: Tensor<f32> = kaiming_init(&mut Rng::new(1), Dims::new(2, 1, 3, 4).unwrap(), 1);
        let one = Tensor::from_vec(Dims::new(1, 1, 1, 1).unwrap(), vec![1.0f32]).unwrap();
        assert_eq!(conv2d_naive(&x, &one, &ConvSpec::pointwise(1, 1)).unwrap(), x);
        let zero = Tensor::zeros(Dims::new(1, 1, 3, 3).unwrap());
        let out = conv2d_naive(&x, &zero, &ConvSpec::full(3, 1, 1, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let mut delta = vec![0.0f32; 9];
        delta[4] = 1.0;
        let delta = Tensor::from_vec(Dims::new(1, 1, 3, 3).unwrap(), delta).unwrap();
        assert_eq!(depthwise_atrous_conv_fwd(&x, &delta, &ConvSpec::depthwise(3, 1, 1)).unwrap(), x);
    }

    #[test]
    fn pointwise_sum_and_identity() {
        let x = Tensor::from_vec(Dims::new(1, 2, 1, 1).unwrap(), vec![3.0f32, 4.0]).unwrap();
        let w = Tensor::from_vec(Dims::new(1, 2, 1, 1).unwrap(), vec![1.0f32, 1.0]).unwrap();
        assert_eq!(pointwise_conv_fwd(&x, &w, None).unwrap().data(), &[7.0]);
        let eye = Tensor::from_vec(Dims::new(2, 2, 1, 1).unwrap(), vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pointwise_conv_fwd(&x, &eye, None).unwrap(), x);
        let bad = Tensor::<f32>::zeros(Dims::new(1, 3, 1, 1).unwrap());
        assert!(matches!(pointwise_conv_fwd(&x, &bad, None), Err(Error::Shape(_))));
    }

    #[test]
    fn spec_errors() {
        assert!(ConvSpec::depthwise(2, 1, 3).validate().is_err());
        assert!(ConvSpec::depthwise(3, 0, 3).validate().is_err());
        let s = ConvSpec { out_channels: 4, ..ConvSpec::depthwise(3, 1, 3) };
        assert!(s.validate().is_err());
        assert_eq!(ConvSpec::depthwise(3, 18, 1).field_of_view(), (37, 37));
    }

    #[test]
    fn full_and_strided_conv_match_naive() {
        let mut rng = Rng::new(9);
        for &(stride, rate, h, w) in &[(1, 1, 5, 6), (2, 1, 7, 8), (1, 3, 6, 5), (2, 1, 8, 8)] {
            let spec = ConvSpec::full(3, rate, 3, 4).with_stride(stride);
            let x: Tensor<f64> = kaiming_init(&mut rng, Dims::new(2, 3, h, w).unwrap(), 1);
            let k: Tensor<f64> = kaiming_init(&mut rng, spec.weight_dims(), 27);
            let fast = conv2d_fwd(&x, &k, None, &spec).unwrap();
            let slow = conv2d_naive(&x, &k, &spec).unwrap();
            assert_eq!(fast.dims(), slow.dims());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_response_of_rate_18() {
        let spec = ConvSpec::depthwise(3, 18, 1);
        let k: Tensor<f32> = kaiming_init(&mut Rng::new(2), spec.weight_dims(), 9);
        let (cy, cx) = (30usize, 33usize);
        let mut x = Tensor::zeros(Dims::new(1, 1, 64, 64).unwrap());
        *x.at_mut(0, 0, cy, cx) = 1.0f32;
        let out = depthwise_atrous_conv_fwd(&x, &k, &spec).unwrap();
        for y in 0..64 {
            for xx in 0..64 {
                let dy = y as isize - cy as isize;
                let dx = xx as isize - cx as isize;
                let on_grid = [-18, 0, 18].contains(&dy) && [-18, 0, 18].contains(&dx);
                let v = out.at(0, 0, y, xx);
                if on_grid {
                    // out(y) = k(a) * in(y + 18*(a-1)), so the response at y sits at tap a = 1 - dy/18
                    let a = (1 - dy / 18) as usize;
                    let b = (1 - dx / 18) as usize;
                    assert_eq!(v, k.at(0, 0, a, b));
                } else {
                    assert_eq!(v, 0.0, "leak at ({y},{xx})");
                }
            }
        }
    }
}
