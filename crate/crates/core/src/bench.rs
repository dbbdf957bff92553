//! Single-threaded wall-clock latency of forward passes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::netgraph::{SegModel, Variant};
use crate::ops::Mode;
use crate::rng::Rng;
use crate::tensor::{Dims, Tensor};
use crate::train::RunConfig;

pub const WARMUP_ITERS: usize = 5;
pub const MIN_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub iters: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        assert!(!ms.is_empty(), "no timing samples");
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 { ms[n / 2] } else { 0.5 * (ms[n / 2 - 1] + ms[n / 2]) };
        // nearest-rank percentile
        let p95 = ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencyStats { iters: n, median_ms: median, mean_ms: ms.iter().sum::<f64>() / n as f64, p95_ms: p95 }
    }
}

/// Times `iters` calls of `f` after `warmup` untimed ones. Runs on the
/// calling thread only.
pub fn time_it<E>(warmup: usize, iters: usize, mut f: impl FnMut() -> std::result::Result<(), E>) -> std::result::Result<LatencyStats, E> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(samples))
}

/// Identical seeded input image for every variant.
pub fn bench_input(cfg: &RunConfig, height: usize, width: usize) -> Result<Tensor<f32>> {
    if height % cfg.sr_factor != 0 || width % cfg.sr_factor != 0 {
        return Err(Error::Config(format!("{height}x{width} not divisible by sr_factor {}", cfg.sr_factor)));
    }
    let d = Dims::new(1, 3, height / cfg.sr_factor, width / cfg.sr_factor)?;
    let mut rng = Rng::new(cfg.seed);
    Tensor::from_vec(d, (0..d.len()).map(|_| rng.next_f64() as f32).collect())
}

/// Forward latency of the whole model (front-end + back-end) for one
/// variant at label extent `height x width`.
pub fn bench_variant(cfg: &RunConfig, variant: Variant, height: usize, width: usize, iters: usize) -> Result<LatencyStats> {
    if iters < MIN_ITERS {
        return Err(Error::Config(format!("bench needs at least {MIN_ITERS} iterations, got {iters}")));
    }
    let c = RunConfig { variant, ..cfg.clone() };
    let mut model = SegModel::<f32>::new(Some(&c.frontend()), &c.backend(), c.seed)?;
    let x = bench_input(&c, height, width)?;
    time_it(WARMUP_ITERS, iters, || model.forward(&x, Mode::Infer).map(drop))
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: Variant,
    pub stats: LatencyStats,
}

/// One row per variant, at the configured label extent.
pub fn bench_all(cfg: &RunConfig, iters: usize) -> Result<Vec<BenchRow>> {
    Variant::ALL
        .iter()
        .map(|&v| Ok(BenchRow { variant: v, stats: bench_variant(cfg, v, cfg.height, cfg.width, iters)? }))
        .collect()
}

/// Where the numbers came from. The compute graph never spawns threads.
pub struct Fingerprint {
    pub threads: usize,
    pub os: &'static str,
    pub arch: &'static str,
    pub cpu: String,
    pub available_cores: usize,
}

impl Fingerprint {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| s.lines().find(|l| l.starts_with("model name")).map(|l| l.split(':').nth(1).unwrap_or("").trim().to_string()))
            .unwrap_or_else(|| "unknown".into());
        Fingerprint {
            threads: 1,
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            cpu: cpu.replace([',', '\n', '\r'], " "),
            available_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

pub const CSV_HEADER: &str = "variant,height,width,iters,median_ms,mean_ms,p95_ms,threads,available_cores,os,arch,cpu";

pub fn bench_csv(rows: &[BenchRow], height: usize, width: usize, fp: &Fingerprint) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let st = r.stats;
        let _ = writeln!(
            s,
            "{},{height},{width},{},{:.4},{:.4},{:.4},{},{},{},{},{}",
            r.variant, st.iters, st.median_ms, st.mean_ms, st.p95_ms, fp.threads, fp.available_cores, fp.os, fp.arch, fp.cpu
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let s = LatencyStats::from_samples((1..=20).map(|v| v as f64).collect());
        assert_eq!(s.median_ms, 10.5);
        assert_eq!(s.mean_ms, 10.5);
        assert_eq!(s.p95_ms, 19.0);
        let s = LatencyStats::from_samples(vec![3.0, 1.0, 2.0]);
        assert_eq!((s.median_ms, s.p95_ms), (2.0, 3.0));
    }

    #[test]
    fn too_few_iterations_rejected() {
        assert!(bench_variant(&RunConfig::default(), Variant::CfAsppSr, 64, 64, 9).is_err());
    }

    #[test]
    fn one_row_per_variant() {
        let rows = bench_all(&RunConfig::default(), MIN_ITERS).unwrap();
        let csv = bench_csv(&rows, 64, 64, &Fingerprint::detect());
        assert_eq!(csv.lines().count(), 1 + Variant::ALL.len());
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == CSV_HEADER.split(',').count()));
    }
}
