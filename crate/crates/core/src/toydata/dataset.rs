//! Synthetic multi-scale shapes for training at desk scale.
//!
//! Labels are rendered analytically at full resolution; images are the same
//! scene with Gaussian noise, box-averaged down by the super-resolution
//! factor. Class 0 is background; shape classes cycle through filled
//! rectangles, filled disks and 1-pixel ring outlines. Shape colors are only
//! weakly tied to the class, so the geometry has to be recognized.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Dims, LabelMap, Tensor};

pub const NOISE_SIGMA: f64 = 0.05;
pub const MIN_RADIUS: f64 = 2.0;

/// One image/label pair: image `(1, 3, H/s, W/s)`, labels `(1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub label: LabelMap,
}

/// Stacked samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<T> {
    pub images: Tensor<T>,
    pub labels: LabelMap,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn from_samples(samples: &[&Sample<T>]) -> Result<Self> {
        let images = Tensor::stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let labels = LabelMap::stack(&samples.iter().map(|s| &s.label).collect::<Vec<_>>())?;
        Ok(SampleBatch { images, labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Rect,
    Disk,
    Ring,
}

fn kind_of(class: usize) -> ShapeKind {
    match (class - 1) % 3 {
        0 => ShapeKind::Rect,
        1 => ShapeKind::Disk,
        _ => ShapeKind::Ring,
    }
}

fn class_color(class: usize, num_classes: usize) -> [f64; 3] {
    let hue = (class - 1) as f64 / (num_classes - 1) as f64;
    let ch = |phase: f64| 0.5 + 0.3 * (std::f64::consts::TAU * (hue + phase)).cos();
    [ch(0.0), ch(1.0 / 3.0), ch(2.0 / 3.0)]
}

pub fn validate_dims(height: usize, width: usize, sr_factor: usize) -> Result<()> {
    if sr_factor == 0 {
        return Err(Error::Config("sr_factor must be >= 1".into()));
    }
    let unit = 32 * sr_factor;
    if height == 0 || width == 0 || height % unit != 0 || width % unit != 0 {
        return Err(Error::Config(format!(
            "label extent {height}x{width} must be a multiple of 32 * sr_factor = {unit}"
        )));
    }
    Ok(())
}

pub fn gen_sample<T: Scalar>(
    seed: u64,
    index: u64,
    height: usize,
    width: usize,
    num_classes: usize,
    sr_factor: usize,
) -> Result<Sample<T>> {
    validate_dims(height, width, sr_factor)?;
    if num_classes < 3 {
        return Err(Error::Config(format!("need background plus two shape classes, got {num_classes} classes")));
    }
    let mut rng = Rng::stream(seed, index);
    let (h, w) = (height, width);
    let mut label = vec![0u8; h * w];
    let mut rgb = vec![0.0f64; 3 * h * w];

    let bg = [rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)];
    for c in 0..3 {
        rgb[c * h * w..(c + 1) * h * w].iter_mut().for_each(|v| *v = bg[c]);
    }

    let max_radius = (h.min(w) as f64 / 4.0).max(8.0 * MIN_RADIUS);
    let shapes = 3 + rng.below(4);
    for _ in 0..shapes {
        let class = 1 + rng.below(num_classes - 1);
        let kind = kind_of(class);
        let radius = (rng.uniform(MIN_RADIUS.ln(), max_radius.ln())).exp();
        let (cy, cx) = (rng.uniform(0.0, h as f64), rng.uniform(0.0, w as f64));
        let (ry, rx) = (radius * rng.uniform(0.6, 1.4), radius * rng.uniform(0.6, 1.4));
        let base = class_color(class, num_classes);
        let color = [
            (base[0] + rng.uniform(-0.25, 0.25)).clamp(0.0, 1.0),
            (base[1] + rng.uniform(-0.25, 0.25)).clamp(0.0, 1.0),
            (base[2] + rng.uniform(-0.25, 0.25)).clamp(0.0, 1.0),
        ];
        let reach = radius.max(ry).max(rx) + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(h);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let inside = match kind {
                    ShapeKind::Rect => dy.abs() <= ry && dx.abs() <= rx,
                    ShapeKind::Disk => dy * dy + dx * dx <= radius * radius,
                    ShapeKind::Ring => ((dy * dy + dx * dx).sqrt() - radius).abs() < 0.5,
                };
                if inside {
                    label[y * w + x] = class as u8;
                    for c in 0..3 {
                        rgb[c * h * w + y * w + x] = color[c];
                    }
                }
            }
        }
    }

    for v in rgb.iter_mut() {
        *v = (*v + NOISE_SIGMA * rng.normal()).clamp(0.0, 1.0);
    }

    let s = sr_factor;
    let (ih, iw) = (h / s, w / s);
    let inv_area = 1.0 / (s * s) as f64;
    let mut image = Vec::with_capacity(3 * ih * iw);
    for c in 0..3 {
        let plane = &rgb[c * h * w..(c + 1) * h * w];
        for y in 0..ih {
            for x in 0..iw {
                let mut acc = 0.0;
                for dy in 0..s {
                    for dx in 0..s {
                        acc += plane[(y * s + dy) * w + x * s + dx];
                    }
                }
                image.push(T::from_f64_lossy(acc * inv_area));
            }
        }
    }
    Ok(Sample {
        image: Tensor::from_vec(Dims::new(1, 3, ih, iw)?, image)?,
        label: LabelMap::new(1, h, w, label)?,
    })
}

/// `count` samples; sample `i` depends only on `(seed, i)` and the extents.
pub fn gen_shapes_dataset<T: Scalar>(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    sr_factor: usize,
) -> Result<Vec<Sample<T>>> {
    (0..count as u64)
        .map(|i| gen_sample(seed, i, height, width, num_classes, sr_factor))
        .collect()
}

/// Seeded 80/20 split into (train, val).
pub fn split_train_val<T: Clone>(samples: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = samples.len() * 4 / 5;
    let mut slots: Vec<Option<T>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| idx.iter().map(|&i| slots[i].take().expect("unique")).collect::<Vec<T>>();
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..]);
    (train, val)
}
