//! Synthetic data, the toy front-end, image files and evaluation metrics.

pub mod dataset;
pub mod frontend;
pub mod metrics;
pub mod pnm;

pub use dataset::{gen_shapes_dataset, split_train_val, Sample, SampleBatch};
pub use frontend::{FrontendConfig, ToyFrontend};
pub use metrics::{miou, IoUStats};
