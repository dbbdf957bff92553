//! Dense 4-D tensors in batch/channel/height/width order.

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

/// Extents of a tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "every dimension must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        Ok(Dims { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Flat row-major offset of `(n, c, y, x)`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn with_c(self, c: usize) -> Dims {
        Dims { c, ..self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    data: Vec<T>,
}

/// Builds a tensor of the given extents filled with `fill`.
pub fn tensor_new<T: Scalar>(dims: [usize; 4], fill: T) -> Result<Tensor<T>> {
    let d = Dims::new(dims[0], dims[1], dims[2], dims[3])?;
    Tensor::from_vec(d, vec![fill; d.len()])
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor { dims, data: vec![T::zero(); dims.len()] }
    }

    pub fn full(dims: Dims, fill: T) -> Self {
        Tensor { dims, data: vec![fill; dims.len()] }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill dims {dims} ({} expected)",
                data.len(),
                dims.len()
            )));
        }
        let t = Tensor { dims, data };
        t.check_finite("Tensor::from_vec")?;
        Ok(t)
    }

    /// Constructor for op outputs whose extents are correct by construction.
    pub(crate) fn from_raw(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.dims.offset(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let o = self.dims.offset(n, c, y, x);
        &mut self.data[o]
    }

    /// The `h*w` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// The `c*h*w` block of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.dims.c * self.dims.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.dims.c * self.dims.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} (flat index {i})")));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.dims, other.dims, "add_assign dims");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().expect("finite scalar")))
                .collect(),
        }
    }

    /// Channels `[start, start + count)` of every batch item.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.dims.c {
            return Err(Error::Shape(format!(
                "channel slice [{start}, {}) outside {} channels",
                start + count,
                self.dims.c
            )));
        }
        let d = self.dims.with_c(count);
        let p = d.plane();
        let mut data = Vec::with_capacity(d.len());
        for n in 0..d.n {
            let base = (n * self.dims.c + start) * p;
            data.extend_from_slice(&self.data[base..base + count * p]);
        }
        Ok(Tensor::from_raw(d, data))
    }

    /// Mirrors every plane left to right.
    pub fn flip_horizontal(&self) -> Self {
        let d = self.dims;
        let mut out = self.clone();
        for row in out.data.chunks_mut(d.w) {
            row.reverse();
        }
        debug_assert_eq!(out.dims, d);
        out
    }

    /// Stacks single-item tensors of identical extents along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidShape("cannot stack an empty list".into()))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.len() * items.len());
        let mut n = 0;
        for t in items {
            if t.dims.c != d.c || t.dims.h != d.h || t.dims.w != d.w {
                return Err(Error::Shape(format!("cannot stack {} with {}", t.dims, d)));
            }
            n += t.dims.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_raw(Dims { n, ..d }, data))
    }
}

/// Joins `a` and `b` along channels, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    concat_many(&[a, b])
}

pub fn concat_many<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidShape("concat of zero tensors".into()))?;
    let d0 = first.dims();
    for p in parts {
        let d = p.dims();
        if d.n != d0.n || d.h != d0.h || d.w != d0.w {
            return Err(Error::Shape(format!("concat of {d} with {d0}: batch/spatial extents differ")));
        }
    }
    let c: usize = parts.iter().map(|p| p.dims().c).sum();
    let out = d0.with_c(c);
    let mut data = Vec::with_capacity(out.len());
    for n in 0..out.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Ok(Tensor::from_raw(out, data))
}

/// Per-pixel class indices for a batch, values in `[0, N)` or [`IGNORE_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

pub const IGNORE_LABEL: u8 = 255;

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!("label map ({n},{h},{w})")));
        }
        if data.len() != n * h * w {
            return Err(Error::Shape(format!("{} labels for a ({n},{h},{w}) map", data.len())));
        }
        Ok(LabelMap { n, h, w, data })
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.h + y) * self.w + x]
    }

    pub fn item(&self, n: usize) -> &[u8] {
        let s = self.h * self.w;
        &self.data[n * s..(n + 1) * s]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.w) {
            row.reverse();
        }
        out
    }

    pub fn stack(items: &[&LabelMap]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidShape("cannot stack an empty list".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if m.h != first.h || m.w != first.w {
                return Err(Error::Shape("label maps differ in size".into()));
            }
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        LabelMap::new(n, first.h, first.w, data)
    }
}

/// Index of the largest logit at each pixel; ties go to the lowest class.
pub fn argmax_channel<T: Scalar>(logits: &Tensor<T>) -> LabelMap {
    let d = logits.dims();
    assert!(d.c <= 255, "class count must fit below the ignore label");
    let p = d.plane();
    let mut data = vec![0u8; d.n * p];
    for n in 0..d.n {
        let out = &mut data[n * p..(n + 1) * p];
        let mut best: Vec<T> = logits.plane(n, 0).to_vec();
        for c in 1..d.c {
            for ((b, o), &v) in best.iter_mut().zip(out.iter_mut()).zip(logits.plane(n, c)) {
                if v > *b {
                    *b = v;
                    *o = c as u8;
                }
            }
        }
    }
    LabelMap { n: d.n, h: d.h, w: d.w, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(d: Dims) -> Tensor<f32> {
        Tensor::from_vec(d, (0..d.len()).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn new_fills_and_rejects_zero_dims() {
        let t = tensor_new::<f32>([1, 1, 2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(t.dtype(), DType::F32);
        let t = tensor_new::<f32>([1, 3, 1, 1], 1.5).unwrap();
        assert_eq!(t.data(), &[1.5, 1.5, 1.5]);
        assert!(matches!(tensor_new::<f32>([1, 0, 2, 2], 0.0), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let d = Dims::new(1, 1, 1, 2).unwrap();
        assert!(matches!(Tensor::from_vec(d, vec![1.0f32, f32::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(Tensor::from_vec(d, vec![1.0f32]), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = seq(Dims::new(1, 2, 4, 4).unwrap());
        let b = seq(Dims::new(1, 3, 4, 4).unwrap()).map(|v| v + 1000.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), Dims::new(1, 5, 4, 4).unwrap());
        for j in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(c.at(0, 2 + j, y, x), b.at(0, j, y, x));
                }
            }
        }
        let bad = seq(Dims::new(1, 3, 4, 5).unwrap());
        assert!(matches!(concat_channels(&a, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_channel_slice_is_rejected() {
        let a = seq(Dims::new(1, 2, 2, 2).unwrap());
        assert!(a.slice_channels(0, 0).is_err());
        assert!(a.slice_channels(1, 2).is_err());
    }

    #[test]
    fn argmax_rules() {
        let d = Dims::new(1, 2, 1, 2).unwrap();
        let t = Tensor::from_vec(d, vec![0.1f32, 0.5, 0.9, 0.5]).unwrap();
        let l = argmax_channel(&t);
        assert_eq!(l.data, vec![1, 0]);
    }

    proptest! {
        #[test]
        fn offset_matches_nested_order(n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
            let d = Dims::new(n, c, h, w).unwrap();
            let mut expect = 0;
            for i in 0..n { for j in 0..c { for y in 0..h { for x in 0..w {
                prop_assert_eq!(d.offset(i, j, y, x), expect);
                expect += 1;
            }}}}
        }

        #[test]
        fn concat_then_slice_recovers_parts(n in 1usize..3, ca in 1usize..4, cb in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
            let mut rng = crate::rng::Rng::new(seed);
            let a: Tensor<f32> = crate::rng::kaiming_init(&mut rng, Dims::new(n, ca, h, w).unwrap(), 3);
            let b: Tensor<f32> = crate::rng::kaiming_init(&mut rng, Dims::new(n, cb, h, w).unwrap(), 3);
            let c = concat_channels(&a, &b).unwrap();
            prop_assert_eq!(c.slice_channels(0, ca).unwrap(), a);
            prop_assert_eq!(c.slice_channels(ca, cb).unwrap(), b);
        }

        #[test]
        fn argmax_invariant_under_monotone_transform(vals in proptest::collection::vec(-5.0f64..5.0, 12), shift in -3.0f64..3.0) {
            let d = Dims::new(1, 3, 2, 2).unwrap();
            let t = Tensor::from_vec(d, vals).unwrap();
            let u = t.map(|v| (v + shift).exp() * 2.0);
            prop_assert_eq!(argmax_channel(&t), argmax_channel(&u));
        }
    }
}
