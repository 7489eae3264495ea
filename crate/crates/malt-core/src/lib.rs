//! Online action detection on streaming features: a top-k sparse-attention
//! transformer with a hierarchical coarse-to-fine encoder and a weight-shared
//! recurrent decoder, built on a small f64 reverse-mode autodiff core.
//!
//! Layering, bottom up:
//!
//! * [`tensor`], [`rng`] — dense f64 math and a portable seeded generator
//! * [`graph`], [`params`], [`optim`], [`gradcheck`] — autodiff, parameter
//!   store, Adam, and the finite-difference oracle
//! * [`attention`] — dense / top-k sparse multi-head attention blocks
//! * [`encoder`], [`decoder`], [`model`] — the architecture and loss
//! * [`data`], [`metrics`] — synthetic multi-scale benchmark and per-frame
//!   AP / calibrated-AP evaluation
//! * [`train`], [`eval`], [`checkpoint`] — loops and persistence

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{LabeledStream, StreamSpec};
pub use error::{MaltError, Result};
pub use graph::{Graph, NodeId};
pub use metrics::MetricReport;
pub use model::{LossBreakdown, Malt, MaltConfig, ModelVariant};
pub use params::ParamStore;
pub use rng::Rng;
pub use tensor::Tensor;
pub use train::TrainerState;
