//! Static computation graphs and the segmentation back-end built on them.

pub mod builder;
pub mod config;
pub mod graph;
pub mod model;

pub use builder::{block_graph, build_aspp_block, build_backend, build_faspp_block, BackendGraph, BlockKind};
pub use config::{BackendConfig, Variant};
pub use graph::{Graph, GraphBuilder, Layer, Node, Slot};
pub use model::{image_dims_for_labels, load_model, save_model, SegModel};
