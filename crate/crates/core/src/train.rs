//! Run configuration and the seeded SGD training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{save_model, BackendConfig, SegModel, Variant};
use crate::ops::{cross_entropy_loss, Mode};
use crate::rng::Rng;
use crate::tensor::IGNORE_LABEL;
use crate::toydata::dataset::validate_dims;
use crate::toydata::{gen_shapes_dataset, split_train_val, FrontendConfig, IoUStats, Sample, SampleBatch};

/// Everything a training run depends on. Serialized as flat TOML with these
/// exact key names; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds weight init, batch order and flip augmentation.
    pub seed: u64,

    pub variant: Variant,
    pub num_classes: usize,
    pub aspp_rates: Vec<usize>,
    pub high_channels: usize,
    pub low_channels: usize,
    pub faspp1_channels: usize,
    pub faspp2_channels: usize,
    pub lowlevel_proj_channels: usize,
    pub shuffle1_t: usize,
    pub shuffle2_t: usize,
    pub final_bilinear_t: usize,
    /// Label pixels per high-level feature pixel.
    pub high_stride: usize,
    /// Label pixels per low-level feature pixel.
    pub low_stride: usize,
    /// Always true; recorded so runs state their interpolation convention.
    pub align_corners: bool,

    pub frontend_widths: Vec<usize>,
    pub frontend_low_tap: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,

    /// Label extent over image extent.
    pub sr_factor: usize,
    pub dataset_seed: u64,
    /// Samples generated before the 80/20 train/val split.
    pub dataset_size: usize,
    /// Label height and width.
    pub height: usize,
    pub width: usize,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    /// The desk-scale toy setup: 64x64 labels from 32x32 images.
    fn default() -> Self {
        RunConfig {
            seed: 1,
            variant: Variant::CfAsppSr,
            num_classes: 4,
            aspp_rates: vec![1, 2, 4],
            high_channels: 128,
            low_channels: 32,
            faspp1_channels: 64,
            faspp2_channels: 32,
            lowlevel_proj_channels: 16,
            shuffle1_t: 8,
            shuffle2_t: 4,
            final_bilinear_t: 2,
            high_stride: 64,
            low_stride: 8,
            align_corners: true,
            frontend_widths: vec![16, 32, 64, 128, 128],
            frontend_low_tap: 1,
            epochs: 40,
            batch_size: 16,
            lr: 0.1,
            momentum: 0.9,
            lr_decay: 0.9,
            lr_decay_every: 50,
            sr_factor: 2,
            dataset_seed: 7,
            dataset_size: 320,
            height: 64,
            width: 64,
            out_dir: PathBuf::from("runs/toy"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn backend(&self) -> BackendConfig {
        BackendConfig {
            variant: self.variant,
            num_classes: self.num_classes,
            aspp_rates: self.aspp_rates.clone(),
            high_channels: self.high_channels,
            low_channels: self.low_channels,
            faspp1_channels: self.faspp1_channels,
            faspp2_channels: self.faspp2_channels,
            lowlevel_proj_channels: self.lowlevel_proj_channels,
            shuffle1_t: self.shuffle1_t,
            shuffle2_t: self.shuffle2_t,
            final_bilinear_t: self.final_bilinear_t,
            high_stride: self.high_stride,
            low_stride: self.low_stride,
        }
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig { in_channels: 3, widths: self.frontend_widths.clone(), low_tap: self.frontend_low_tap }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend().validate()?;
        let fe = self.frontend();
        fe.validate()?;
        if !self.align_corners {
            return Err(Error::Config("only align_corners = true is implemented".into()));
        }
        if self.high_stride != self.sr_factor * fe.high_stride() || self.low_stride != self.sr_factor * fe.low_stride() {
            return Err(Error::Config(format!(
                "strides {} / {} must be sr_factor * front-end strides = {} * {} / {} * {}",
                self.high_stride,
                self.low_stride,
                self.sr_factor,
                fe.high_stride(),
                self.sr_factor,
                fe.low_stride()
            )));
        }
        validate_dims(self.height, self.width, self.sr_factor)?;
        if self.height % self.high_stride != 0 || self.width % self.high_stride != 0 {
            return Err(Error::Config(format!(
                "label extent {}x{} must be a multiple of high_stride {}",
                self.height, self.width, self.high_stride
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("epochs, batch_size and lr_decay_every must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr must be positive, momentum in [0, 1), lr_decay positive".into()));
        }
        if self.dataset_size < 5 {
            return Err(Error::Config("dataset_size must be >= 5 for an 80/20 split".into()));
        }
        // shape-checks the model itself
        SegModel::<f32>::new(Some(&fe), &self.backend(), 0)?;
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub val_miou: f64,
}

pub struct TrainOutcome {
    pub model: SegModel<f32>,
    pub history: Vec<EpochStats>,
}

pub struct Dataset {
    pub train: Vec<Sample<f32>>,
    pub val: Vec<Sample<f32>>,
}

pub fn make_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let all = gen_shapes_dataset(cfg.dataset_seed, cfg.dataset_size, cfg.height, cfg.width, cfg.num_classes, cfg.sr_factor)?;
    let (train, val) = split_train_val(all, cfg.dataset_seed);
    Ok(Dataset { train, val })
}

/// Mean IoU of `model` over `samples`, evaluated in batches.
pub fn evaluate(model: &mut SegModel<f32>, samples: &[Sample<f32>], num_classes: usize, batch_size: usize) -> Result<f64> {
    let mut stats = IoUStats::new(num_classes, IGNORE_LABEL);
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = SampleBatch::from_samples(&chunk.iter().collect::<Vec<_>>())?;
        let pred = model.predict(&batch.images)?;
        stats.accumulate(&pred, &batch.labels)?;
    }
    model.clear_cache();
    Ok(stats.mean())
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const FLIP_STREAM: u64 = 0x464c_4950;

/// Where a run writes its artifacts.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    /// Creates the directory and proves it is writable before any compute.
    pub fn prepare(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let probe = dir.join(".write_probe");
        std::fs::write(&probe, b"")?;
        std::fs::remove_file(&probe)?;
        Ok(RunFiles { dir: dir.to_path_buf() })
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.segsr")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_epoch{epoch:04}.segsr"))
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.txt")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,val_miou\n");
    for h in history {
        let _ = writeln!(s, "{},{:.6},{:.6}", h.epoch, h.loss, h.val_miou);
    }
    s
}

/// Trains on the configured toy dataset. With `files`, writes the config,
/// the per-epoch CSV, checkpoints at every lr decay boundary, the final
/// model and a short report.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    files: Option<&RunFiles>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Data("empty train or val split".into()));
    }
    if let Some(f) = files {
        std::fs::write(f.config(), cfg.to_toml())?;
    }
    let mut model = SegModel::<f32>::new(Some(&cfg.frontend()), &cfg.backend(), cfg.seed)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        Rng::stream(cfg.seed ^ SHUFFLE_STREAM, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let flipped: Vec<Sample<f32>> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.train[i];
                    let coin = Rng::stream(cfg.seed ^ FLIP_STREAM, (epoch * n + i) as u64).coin();
                    if coin {
                        Sample { image: s.image.flip_horizontal(), label: s.label.flip_horizontal() }
                    } else {
                        s.clone()
                    }
                })
                .collect();
            let batch = SampleBatch::from_samples(&flipped.iter().collect::<Vec<_>>())?;
            model.zero_grad();
            let logits = model.forward(&batch.images, Mode::Train)?;
            let (loss, grad) = cross_entropy_loss(&logits, &batch.labels, IGNORE_LABEL)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {batches}")));
            }
            model.backward(&grad)?;
            model.sgd_step(lr as f32, cfg.momentum as f32);
            loss_sum += loss as f64;
            batches += 1;
        }
        model.clear_cache();
        let val_miou = evaluate(&mut model, &data.val, cfg.num_classes, cfg.batch_size)?;
        let stats = EpochStats { epoch, lr, loss: loss_sum / batches as f64, val_miou };
        history.push(stats);
        on_epoch(&stats);
        if let Some(f) = files {
            std::fs::write(f.history(), history_csv(&history))?;
            if (epoch + 1) % cfg.lr_decay_every == 0 && epoch + 1 < cfg.epochs {
                save_model(&model, &f.checkpoint(epoch + 1))?;
            }
        }
    }
    if let Some(f) = files {
        save_model(&model, &f.model())?;
        let last = history.last().expect("epochs >= 1");
        let report = format!(
            "variant = {}\nparams = {}\nepochs = {}\nfinal_loss = {:.6}\nfinal_val_miou = {:.6}\nbest_val_miou = {:.6}\n",
            cfg.variant,
            model.param_count(),
            cfg.epochs,
            last.loss,
            last.val_miou,
            history.iter().map(|h| h.val_miou).fold(0.0, f64::max),
        );
        std::fs::write(f.report(), report)?;
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("seed = 3\nlearning_rate = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert_eq!(RunConfig::from_toml("seed = 3\n").unwrap().seed, 3);
    }

    #[test]
    fn lr_schedule() {
        let c = RunConfig::default();
        assert_eq!(c.lr_at(0), 0.1);
        assert_eq!(c.lr_at(49), 0.1);
        assert!((c.lr_at(50) - 0.09).abs() < 1e-15);
        assert!((c.lr_at(100) - 0.081).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_strides_rejected() {
        let c = RunConfig { sr_factor: 1, ..Default::default() };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("sr_factor"), "{msg}");
        let c = RunConfig { height: 96, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
