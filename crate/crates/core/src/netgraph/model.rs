//! Front-end + back-end bundle and its binary model file.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "SEGSR1\0"  u32 record-count
//! record*:    u16 name-len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!             u8 ndim, ndim x u32 dims, raw values
//! ```
//!
//! The first record, `meta.config`, is a 1-D f64 vector describing the
//! architecture; the rest are `frontend.<node>.<field>` and
//! `backend.<node>.<field>` tensors in graph order.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::{Mode, Param};
use crate::rng::Rng;
use crate::scalar::{DType, Scalar};
use crate::tensor::{argmax_channel, Dims, LabelMap, Tensor};
use crate::toydata::{FrontendConfig, ToyFrontend};

use super::builder::{build_backend, BackendGraph};
use super::config::{BackendConfig, Variant};

pub const MAGIC: &[u8; 7] = b"SEGSR1\0";
const FORMAT_VERSION: f64 = 1.0;
const META: &str = "meta.config";

/// A trainable segmentation model. Without a front-end it consumes
/// precomputed (high, low) features.
#[derive(Debug, Clone)]
pub struct SegModel<T> {
    pub frontend: Option<ToyFrontend<T>>,
    pub backend: BackendGraph<T>,
}

impl<T: Scalar> SegModel<T> {
    pub fn new(frontend: Option<&FrontendConfig>, backend: &BackendConfig, seed: u64) -> Result<Self> {
        if let Some(fc) = frontend {
            check_compatible(fc, backend)?;
        }
        let frontend = frontend.map(|fc| ToyFrontend::new(fc, Rng::stream(seed, 0).next_u64())).transpose()?;
        let backend = build_backend(backend, Rng::stream(seed, 1).next_u64())?;
        Ok(SegModel { frontend, backend })
    }

    /// Label pixels per input pixel along each axis.
    pub fn sr_factor(&self) -> Option<usize> {
        self.frontend.as_ref().map(|f| self.backend.config.high_stride / f.config.high_stride())
    }

    /// Image `(n, 3, H', W')` to logits `(n, N, H, W)`.
    pub fn forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let fe = self
            .frontend
            .as_mut()
            .ok_or_else(|| Error::State("model has no front-end; feed features to the back-end".into()))?;
        let (low, high) = fe.forward(images, mode)?;
        self.backend.forward(&high, &low, mode)
    }

    /// Back-propagates through the back-end and, if present, the front-end,
    /// accumulating parameter gradients. Returns the image gradient when
    /// there is a front-end.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        let (g_high, g_low) = self.backend.backward(grad_logits)?;
        self.frontend.as_mut().map(|fe| fe.backward(&g_low, &g_high)).transpose()
    }

    /// Trainable parameters, front-end first, in graph order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        if let Some(fe) = self.frontend.as_mut() {
            out.extend(fe.graph.params_mut());
        }
        out.extend(self.backend.graph.params_mut());
        out
    }

    pub fn predict(&mut self, images: &Tensor<T>) -> Result<LabelMap> {
        Ok(argmax_channel(&self.forward(images, Mode::Infer)?))
    }

    pub fn zero_grad(&mut self) {
        if let Some(fe) = self.frontend.as_mut() {
            fe.graph.zero_grad();
        }
        self.backend.graph.zero_grad();
    }

    pub fn sgd_step(&mut self, lr: T, momentum: T) {
        if let Some(fe) = self.frontend.as_mut() {
            fe.graph.sgd_step(lr, momentum);
        }
        self.backend.graph.sgd_step(lr, momentum);
    }

    pub fn param_count(&self) -> usize {
        self.frontend.as_ref().map_or(0, |f| f.graph.param_count()) + self.backend.graph.param_count()
    }

    pub fn clear_cache(&mut self) {
        if let Some(fe) = self.frontend.as_mut() {
            fe.graph.clear_cache();
        }
        self.backend.graph.clear_cache();
    }

    fn meta(&self) -> Vec<f64> {
        let c = &self.backend.config;
        let mut m = vec![FORMAT_VERSION, c.variant.code() as f64];
        for v in [
            c.num_classes,
            c.high_channels,
            c.low_channels,
            c.faspp1_channels,
            c.faspp2_channels,
            c.lowlevel_proj_channels,
            c.shuffle1_t,
            c.shuffle2_t,
            c.final_bilinear_t,
            c.high_stride,
            c.low_stride,
            c.aspp_rates.len(),
        ] {
            m.push(v as f64);
        }
        m.extend(c.aspp_rates.iter().map(|&r| r as f64));
        match &self.frontend {
            None => m.push(0.0),
            Some(fe) => {
                let f = &fe.config;
                m.extend([1.0, f.in_channels as f64, f.low_tap as f64, f.widths.len() as f64]);
                m.extend(f.widths.iter().map(|&w| w as f64));
            }
        }
        m
    }

    /// Every persisted tensor with its file name, in file order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(fe) = &self.frontend {
            out.extend(fe.graph.named_tensors().into_iter().map(|(n, t)| (format!("frontend.{n}"), t)));
        }
        out.extend(self.backend.graph.named_tensors().into_iter().map(|(n, t)| (format!("backend.{n}"), t)));
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(fe) = &mut self.frontend {
            out.extend(fe.graph.named_tensors_mut().into_iter().map(|(n, t)| (format!("frontend.{n}"), t)));
        }
        out.extend(self.backend.graph.named_tensors_mut().into_iter().map(|(n, t)| (format!("backend.{n}"), t)));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(tensors.len() as u32 + 1).to_le_bytes());
        let meta = self.meta();
        write_header(&mut out, META, DType::F64, &[meta.len()]);
        meta.iter().for_each(|v| v.write_le(&mut out));
        for (name, t) in tensors {
            let d = t.dims();
            if name.ends_with(".weight") {
                write_header(&mut out, &name, T::DTYPE, &d.as_array());
            } else {
                write_header(&mut out, &name, T::DTYPE, &[d.c]);
            }
            t.data().iter().for_each(|v| v.write_le(&mut out));
        }
        out
    }

    /// Parses and validates the whole file before building anything.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let records = parse_records(bytes)?;
        let (first, rest) = records.split_first().ok_or_else(|| Error::Format("no records".into()))?;
        if first.name != META || first.dtype != DType::F64 || first.dims.len() != 1 {
            return Err(Error::Format(format!("first record must be a 1-D f64 {META}")));
        }
        let meta: Vec<f64> = first.data.chunks_exact(8).map(f64::read_le).collect();
        let (fc, bc) = decode_meta(&meta)?;
        let mut model = SegModel::new(fc.as_ref(), &bc, 0).map_err(|e| Error::Format(format!("stored config: {e}")))?;

        let mut by_name: HashMap<&str, &Record> = HashMap::with_capacity(rest.len());
        for r in rest {
            if by_name.insert(r.name.as_str(), r).is_some() {
                return Err(Error::Format(format!("duplicate record {}", r.name)));
            }
        }
        let mut slots = model.named_tensors_mut();
        if slots.len() != by_name.len() {
            return Err(Error::Format(format!(
                "architecture has {} tensors, file has {}",
                slots.len(),
                by_name.len()
            )));
        }
        // Check every record first so a bad file never yields a half-loaded model.
        let mut values = Vec::with_capacity(slots.len());
        for (name, t) in &slots {
            let r = by_name.get(name.as_str()).ok_or_else(|| Error::Format(format!("missing record {name}")))?;
            if r.dtype != T::DTYPE {
                return Err(Error::Format(format!("record {name} is {}, expected {}", r.dtype, T::DTYPE)));
            }
            let d = t.dims();
            let want: Vec<usize> = if name.ends_with(".weight") { d.as_array().to_vec() } else { vec![d.c] };
            if r.dims != want {
                return Err(Error::Format(format!("record {name} has dims {:?}, expected {want:?}", r.dims)));
            }
            let v: Vec<T> = r.data.chunks_exact(T::DTYPE.size_bytes()).map(T::read_le).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("record {name} holds non-finite values")));
            }
            values.push(v);
        }
        for ((_, t), v) in slots.iter_mut().zip(values) {
            t.data_mut().copy_from_slice(&v);
        }
        Ok(model)
    }
}

fn check_compatible(fc: &FrontendConfig, bc: &BackendConfig) -> Result<()> {
    fc.validate()?;
    bc.validate()?;
    if fc.high_channels() != bc.high_channels || fc.low_channels() != bc.low_channels {
        return Err(Error::Config(format!(
            "front-end emits {} / {} channels, back-end expects {} / {}",
            fc.high_channels(),
            fc.low_channels(),
            bc.high_channels,
            bc.low_channels
        )));
    }
    let s = bc.high_stride / fc.high_stride();
    if s == 0 || bc.high_stride != s * fc.high_stride() || bc.low_stride != s * fc.low_stride() {
        return Err(Error::Config(format!(
            "back-end strides {} / {} are not one common multiple of the front-end strides {} / {}",
            bc.high_stride,
            bc.low_stride,
            fc.high_stride(),
            fc.low_stride()
        )));
    }
    Ok(())
}

fn write_header(out: &mut Vec<u8>, name: &str, dtype: DType, dims: &[usize]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

struct Record<'a> {
    name: String,
    dtype: DType,
    dims: Vec<usize>,
    data: &'a [u8],
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn parse_records(bytes: &[u8]) -> Result<Vec<Record<'_>>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let count = cur.u32("record count")? as usize;
    // Each record takes at least 4 bytes; rejects absurd counts early.
    if count > bytes.len() / 4 {
        return Err(Error::Format(format!("record count {count} exceeds file size")));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("record {i}");
        let len = cur.u16(&what)? as usize;
        let name = std::str::from_utf8(cur.take(len, &what)?)
            .map_err(|_| Error::Format(format!("{what}: name is not UTF-8")))?
            .to_string();
        let code = cur.u8(&name)?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("{name}: unknown dtype {code}")))?;
        let ndim = cur.u8(&name)? as usize;
        if ndim == 0 {
            return Err(Error::Format(format!("{name}: zero-dimensional record")));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut count = 1usize;
        for _ in 0..ndim {
            let d = cur.u32(&name)? as usize;
            count = count.checked_mul(d).ok_or_else(|| Error::Format(format!("{name}: element count overflows")))?;
            dims.push(d);
        }
        let nbytes = count
            .checked_mul(dtype.size_bytes())
            .ok_or_else(|| Error::Format(format!("{name}: byte count overflows")))?;
        let data = cur.take(nbytes, &name)?;
        records.push(Record { name, dtype, dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(records)
}

fn decode_meta(meta: &[f64]) -> Result<(Option<FrontendConfig>, BackendConfig)> {
    let mut it = meta.iter().copied();
    let mut next = |what: &str| -> Result<usize> {
        let v = it.next().ok_or_else(|| Error::Format(format!("{META} ends before {what}")))?;
        if v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&v) {
            return Err(Error::Format(format!("{META}: {what} = {v} is not a count")));
        }
        Ok(v as usize)
    };
    let version = next("version")?;
    if version as f64 != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let code = next("variant")?;
    let variant = Variant::from_code(code as u32).ok_or_else(|| Error::Format(format!("unknown variant code {code}")))?;
    let num_classes = next("num_classes")?;
    let high_channels = next("high_channels")?;
    let low_channels = next("low_channels")?;
    let faspp1_channels = next("faspp1_channels")?;
    let faspp2_channels = next("faspp2_channels")?;
    let lowlevel_proj_channels = next("lowlevel_proj_channels")?;
    let shuffle1_t = next("shuffle1_t")?;
    let shuffle2_t = next("shuffle2_t")?;
    let final_bilinear_t = next("final_bilinear_t")?;
    let high_stride = next("high_stride")?;
    let low_stride = next("low_stride")?;
    let n_rates = next("rate count")?;
    let aspp_rates = (0..n_rates).map(|_| next("aspp_rates")).collect::<Result<Vec<_>>>()?;
    let frontend = match next("front-end flag")? {
        0 => None,
        1 => {
            let in_channels = next("in_channels")?;
            let low_tap = next("low_tap")?;
            let n = next("stage count")?;
            let widths = (0..n).map(|_| next("widths")).collect::<Result<Vec<_>>>()?;
            Some(FrontendConfig { in_channels, widths, low_tap })
        }
        f => return Err(Error::Format(format!("front-end flag {f}"))),
    };
    if it.next().is_some() {
        return Err(Error::Format(format!("{META} has trailing values")));
    }
    let backend = BackendConfig {
        variant,
        num_classes,
        aspp_rates,
        high_channels,
        low_channels,
        faspp1_channels,
        faspp2_channels,
        lowlevel_proj_channels,
        shuffle1_t,
        shuffle2_t,
        final_bilinear_t,
        high_stride,
        low_stride,
    };
    Ok((frontend, backend))
}

/// Writes through a temporary file in the same directory, then renames, so
/// readers never observe a partial model.
pub fn save_model<T: Scalar>(model: &SegModel<T>, path: &Path) -> Result<()> {
    let bytes = model.to_bytes();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "model path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<SegModel<T>> {
    SegModel::from_bytes(&std::fs::read(path)?)
}

/// Input dims a model needs to produce labels of extent `(h, w)`.
pub fn image_dims_for_labels<T: Scalar>(model: &SegModel<T>, n: usize, h: usize, w: usize) -> Result<Dims> {
    let s = model.sr_factor().ok_or_else(|| Error::State("model has no front-end".into()))?;
    let fe = model.frontend.as_ref().expect("checked");
    if h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!("label extent {h}x{w} not divisible by the SR factor {s}")));
    }
    Dims::new(n, fe.config.in_channels, h / s, w / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (FrontendConfig, BackendConfig) {
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
        (fc, bc)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (fc, bc) = tiny();
        let mut m = SegModel::<f32>::new(Some(&fc), &bc, 5).unwrap();
        assert_eq!(m.sr_factor(), Some(2));
        let bytes = m.to_bytes();
        let mut back = SegModel::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let x = Tensor::full(Dims::new(1, 3, 16, 16).unwrap(), 0.25f32);
        let a = m.forward(&x, Mode::Infer).unwrap();
        let b = back.forward(&x, Mode::Infer).unwrap();
        assert_eq!(a.dims(), Dims::new(1, 3, 32, 32).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_files_rejected() {
        let (fc, bc) = tiny();
        let bytes = SegModel::<f64>::new(Some(&fc), &bc, 5).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SegModel::<f64>::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(SegModel::<f64>::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(SegModel::<f64>::from_bytes(&extra), Err(Error::Format(_))));
        // stored as f64, read as f32
        assert!(matches!(SegModel::<f32>::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn incompatible_frontend_rejected() {
        let (fc, mut bc) = tiny();
        bc.high_channels = 9;
        assert!(SegModel::<f32>::new(Some(&fc), &bc, 0).is_err());
        let (fc, mut bc) = tiny();
        bc.low_stride = 8;
        bc.shuffle1_t = 2;
        bc.shuffle2_t = 4;
        assert!(SegModel::<f32>::new(Some(&fc), &bc, 0).is_err());
    }
}
