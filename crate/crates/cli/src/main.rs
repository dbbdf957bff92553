use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segsr::bench::{bench_all, bench_csv, Fingerprint, MIN_ITERS};
use segsr::flops::report_model;
use segsr::netgraph::{load_model, SegModel};
use segsr::ops::ShuffleLayout;
use segsr::selftest::{run_selftest, SelftestOptions};
use segsr::toydata::pnm::{read_ppm, write_pgm};
use segsr::train::{make_dataset, train, RunConfig, RunFiles};

#[derive(Parser)]
#[command(name = "segsr", version, about = "CF-ASPP segmentation back-end: train, infer, count MACs, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer MAC and parameter report as CSV.
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the synthetic shapes dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Label a PPM image with a trained model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-pass latency of every variant.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(MIN_ITERS as u64..))]
        iters: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in correctness suites.
    Selftest {
        /// Random cases for the depthwise-vs-reference comparison.
        #[arg(long, default_value_t = 100)]
        oracle_cases: usize,
        /// Check a deliberately wrong shuffle layout; the run must fail.
        #[arg(long, hide = true)]
        perturb_shuffle: bool,
    },
}

fn cmd_flops(config: &Path, out: &Path) -> segsr::Result<()> {
    let cfg = RunConfig::load(config)?;
    let model = SegModel::<f32>::new(Some(&cfg.frontend()), &cfg.backend(), cfg.seed)?;
    let rep = report_model(&model, cfg.height, cfg.width)?;
    std::fs::write(out, rep.to_csv())?;
    println!(
        "{}: {} MACs, {} params, activation peak {} elements per sample",
        cfg.variant, rep.total_macs, rep.total_params, rep.activation_peak
    );
    Ok(())
}

fn cmd_train(config: &Path, seed: u64, out_dir: &Path) -> segsr::Result<()> {
    let cfg = RunConfig { seed, out_dir: out_dir.to_path_buf(), ..RunConfig::load(config)? };
    cfg.validate()?;
    let files = RunFiles::prepare(out_dir)?;
    let data = make_dataset(&cfg)?;
    let outcome = train(&cfg, &data, Some(&files), |s| {
        eprintln!("epoch {:>4}  lr {:.5}  loss {:.5}  val mIoU {:.4}", s.epoch, s.lr, s.loss, s.val_miou)
    })?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "{}: final loss {:.5}, val mIoU {:.4}; model written to {}",
        cfg.variant,
        last.loss,
        last.val_miou,
        files.model().display()
    );
    Ok(())
}

fn cmd_infer(model: &Path, image: &Path, out: &Path) -> segsr::Result<()> {
    let mut m = load_model::<f32>(model)?;
    let img = read_ppm::<f32>(image)?;
    let labels = m.predict(&img)?;
    write_pgm(out, &labels)?;
    Ok(())
}

fn cmd_bench(config: &Path, iters: usize, out: &Path) -> segsr::Result<()> {
    let cfg = RunConfig::load(config)?;
    let rows = bench_all(&cfg, iters)?;
    let fp = Fingerprint::detect();
    std::fs::write(out, bench_csv(&rows, cfg.height, cfg.width, &fp))?;
    for r in &rows {
        println!(
            "{:<18} median {:>9.3} ms  mean {:>9.3} ms  p95 {:>9.3} ms",
            r.variant.name(),
            r.stats.median_ms,
            r.stats.mean_ms,
            r.stats.p95_ms
        );
    }
    println!("threads {} of {} available, {} {}, {}", fp.threads, fp.available_cores, fp.os, fp.arch, fp.cpu);
    Ok(())
}

fn cmd_selftest(oracle_cases: usize, perturb_shuffle: bool) -> bool {
    let layout = if perturb_shuffle { ShuffleLayout::Transposed } else { ShuffleLayout::ChannelMajor };
    let results = run_selftest(&SelftestOptions { shuffle_layout: layout, oracle_cases });
    for r in &results {
        println!("{} {:<20} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} suites passed", results.len() - failed, results.len());
    failed == 0
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Flops { config, out } => cmd_flops(&config, &out),
        Command::Train { config, seed, out_dir } => cmd_train(&config, seed, &out_dir),
        Command::Infer { model, image, out } => cmd_infer(&model, &image, &out),
        Command::Bench { config, iters, out } => cmd_bench(&config, iters as usize, &out),
        Command::Selftest { oracle_cases, perturb_shuffle } => {
            return if cmd_selftest(oracle_cases, perturb_shuffle) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
