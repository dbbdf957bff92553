use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segsr::toydata::gen_shapes_dataset;
use segsr::toydata::pnm::{read_pgm, write_ppm};
use segsr::train::RunConfig;

fn segsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segsr")).args(args).output().expect("spawn segsr")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn small() -> RunConfig {
    RunConfig { dataset_size: 20, batch_size: 8, epochs: 2, ..Default::default() }
}

#[test]
fn selftest_passes() {
    let o = segsr(&["selftest"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
}

#[test]
fn selftest_catches_wrong_shuffle_layout() {
    let o = segsr(&["selftest", "--perturb-shuffle"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL shuffle-bijection"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&segsr(&[])), 2);
    assert_eq!(code(&segsr(&["frobnicate"])), 2);
    assert_eq!(code(&segsr(&["train", "--config", "x.toml"])), 2);
    assert_eq!(code(&segsr(&["bench", "--config", "x.toml", "--iters", "9", "--out", "b.csv"])), 2);
}

#[test]
fn invalid_config_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bad.toml");
    std::fs::write(&p, "num_classes = 4\nbogus = 1\n").unwrap();
    let o = segsr(&["flops", "--config", p.to_str().unwrap(), "--out", d.path().join("f.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn flops_writes_per_layer_csv() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &RunConfig::default());
    let out = d.path().join("f.csv");
    let o = segsr(&["flops", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), segsr::flops::CSV_HEADER);
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("backend.faspp1.branch_r1.conv,depthwise,")));
    assert!(rows.iter().any(|r| r.starts_with("backend.head.shuffle,pixel_shuffle,")));
}

#[test]
fn train_then_infer_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small();
    let cfg_path = write_config(d.path(), &cfg);
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let dir = d.path().join(run);
        let o = segsr(&["train", "--config", cfg_path.to_str().unwrap(), "--seed", "5", "--out-dir", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        models.push(dir.join("model.segsr"));
    }
    assert_eq!(std::fs::read(&models[0]).unwrap(), std::fs::read(&models[1]).unwrap());

    let sample = &gen_shapes_dataset::<f32>(99, 1, cfg.height, cfg.width, cfg.num_classes, cfg.sr_factor).unwrap()[0];
    let img = d.path().join("in.ppm");
    write_ppm(&img, &sample.image).unwrap();
    let mut labels = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let out = d.path().join(format!("out{i}.pgm"));
        let o = segsr(&["infer", "--model", m.to_str().unwrap(), "--image", img.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let l = read_pgm(&out).unwrap();
        assert_eq!((l.h, l.w), (cfg.height, cfg.width));
        assert!(l.data.iter().all(|&v| (v as usize) < cfg.num_classes));
        labels.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(labels[0], labels[1]);

    // an image the front-end cannot tile onto the label grid
    let odd = d.path().join("odd.ppm");
    std::fs::write(&odd, b"P6\n5 3\n255\n".iter().copied().chain([0u8; 45]).collect::<Vec<_>>()).unwrap();
    let o = segsr(&["infer", "--model", models[0].to_str().unwrap(), "--image", odd.to_str().unwrap(), "--out", d.path().join("x.pgm").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_writes_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &RunConfig::default());
    let out = d.path().join("b.csv");
    let o = segsr(&["bench", "--config", cfg.to_str().unwrap(), "--iters", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), segsr::bench::CSV_HEADER);
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["cf_aspp_sr", "cf_aspp", "f_aspp", "aspp_full", "bilinear_baseline"]);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let toy = RunConfig::load(&dir.join("toy.toml")).unwrap();
    assert_eq!(toy, RunConfig::default());
    let full = RunConfig::load(&dir.join("full_scale.toml")).unwrap();
    full.validate().unwrap();
    assert_eq!(full.backend(), segsr::netgraph::BackendConfig { num_classes: 19, ..Default::default() });

    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("f.csv");
    let cfg = dir.join("full_scale.toml");
    let o = segsr(&["flops", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
