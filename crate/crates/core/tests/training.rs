use segsr::netgraph::load_model;
use segsr::toydata::{miou, SampleBatch};
use segsr::train::{make_dataset, train, RunConfig, RunFiles};
use segsr::{Error, IGNORE_LABEL};

fn small() -> RunConfig {
    RunConfig { dataset_size: 40, batch_size: 8, epochs: 2, ..Default::default() }
}

#[test]
fn loss_decreases_over_first_epochs_on_default_config() {
    let cfg = RunConfig { epochs: 6, ..Default::default() };
    let data = make_dataset(&cfg).unwrap();
    let out = train(&cfg, &data, None, |_| {}).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|h| h.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn same_seed_gives_byte_identical_artifacts() {
    let cfg = small();
    let data = make_dataset(&cfg).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let files = RunFiles::prepare(d.path()).unwrap();
        train(&cfg, &data, Some(&files), |_| {}).unwrap();
    }
    for name in ["model.segsr", "history.csv", "config.toml"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let other = tempfile::tempdir().unwrap();
    let files = RunFiles::prepare(other.path()).unwrap();
    train(&RunConfig { seed: 2, ..cfg }, &data, Some(&files), |_| {}).unwrap();
    assert_ne!(std::fs::read(files.model()).unwrap(), std::fs::read(dirs[0].path().join("model.segsr")).unwrap());
}

#[test]
fn checkpoints_land_on_decay_boundaries() {
    let cfg = RunConfig { lr_decay_every: 1, ..small() };
    let data = make_dataset(&cfg).unwrap();
    let d = tempfile::tempdir().unwrap();
    let files = RunFiles::prepare(d.path()).unwrap();
    let out = train(&cfg, &data, Some(&files), |_| {}).unwrap();
    assert!(files.checkpoint(1).exists());
    assert!(!files.checkpoint(2).exists());
    assert!(files.model().exists() && files.report().exists());
    assert!((out.history[1].lr - 0.09).abs() < 1e-12);
    let history = std::fs::read_to_string(files.history()).unwrap();
    assert_eq!(history.lines().count(), 3);
}

#[test]
fn unwritable_output_directory_fails_before_training() {
    let d = tempfile::tempdir().unwrap();
    let blocker = d.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    assert!(matches!(RunFiles::prepare(&blocker.join("run")), Err(Error::Io(_))));
}

#[test]
fn trained_model_labels_its_training_images() {
    let cfg = RunConfig { dataset_size: 20, batch_size: 8, epochs: 80, lr_decay_every: 40, ..Default::default() };
    let data = make_dataset(&cfg).unwrap();
    let d = tempfile::tempdir().unwrap();
    let files = RunFiles::prepare(d.path()).unwrap();
    train(&cfg, &data, Some(&files), |_| {}).unwrap();
    let mut model = load_model::<f32>(&files.model()).unwrap();
    let s = &data.train[0];
    let batch = SampleBatch::from_samples(&[s]).unwrap();
    let pred = model.predict(&batch.images).unwrap();
    let (_, m) = miou(&pred, &batch.labels, cfg.num_classes, IGNORE_LABEL).unwrap();
    assert!(m > 0.5, "training-image mIoU {m}");
}
