//! Binary PPM (P6) images and PGM (P5) label maps, maxval 255.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, LabelMap, Tensor};

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Data(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated or malformed netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Data("netpbm header value out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Data("netpbm header not terminated by whitespace".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("unsupported netpbm geometry {width}x{height}, maxval {maxval}")));
    }
    Ok(Header { width, height, maxval, data_start: pos + 1 })
}

/// Image tensor `(1, 3, h, w)` with values in `[0, 1]`.
pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let hd = parse_header(bytes, b"P6")?;
    let n = hd.width * hd.height;
    let raster = bytes
        .get(hd.data_start..hd.data_start + 3 * n)
        .ok_or_else(|| Error::Data("PPM raster truncated".into()))?;
    let scale = T::one() / T::from_usize_lossy(hd.maxval);
    let mut data = vec![T::zero(); 3 * n];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = T::from_usize_lossy(px[c] as usize) * scale;
        }
    }
    Tensor::from_vec(Dims::new(1, 3, hd.height, hd.width)?, data)
}

pub fn encode_ppm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let d = image.dims();
    if d.n != 1 || d.c != 3 {
        return Err(Error::Shape(format!("PPM needs a (1,3,h,w) image, got {d}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", d.w, d.h).into_bytes();
    let p = d.plane();
    for i in 0..p {
        for c in 0..3 {
            let v = image.data()[c * p + i].to_f64().expect("finite");
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let hd = parse_header(bytes, b"P5")?;
    let n = hd.width * hd.height;
    let raster = bytes
        .get(hd.data_start..hd.data_start + n)
        .ok_or_else(|| Error::Data("PGM raster truncated".into()))?;
    LabelMap::new(1, hd.height, hd.width, raster.to_vec())
}

pub fn encode_pgm(labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.n != 1 {
        return Err(Error::Shape(format!("PGM holds one map, got a batch of {}", labels.n)));
    }
    let mut out = format!("P5\n{} {}\n255\n", labels.w, labels.h).into_bytes();
    out.extend_from_slice(&labels.data);
    Ok(out)
}

pub fn read_ppm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let bytes = encode_ppm(image)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    let bytes = encode_pgm(labels)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_of_quantized_values() {
        let vals: Vec<f32> = (0..3 * 6).map(|i| (i * 13 % 256) as f32 / 255.0).collect();
        let img = Tensor::from_vec(Dims::new(1, 3, 2, 3).unwrap(), vals).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back: Tensor<f32> = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&back).unwrap(), bytes);
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let l = LabelMap::new(1, 2, 2, vec![0, 3, 255, 1]).unwrap();
        let bytes = encode_pgm(&l).unwrap();
        assert_eq!(decode_pgm(&bytes).unwrap(), l);
        let mut commented = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        commented.extend_from_slice(&[0, 3, 255, 1]);
        assert_eq!(decode_pgm(&commented).unwrap(), l);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode_ppm::<f32>(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }
}
