//! Curriculum learning driven by variance-of-gradients difficulty scores.
//!
//! The crate trains a small VGG-style image classifier with a minimal
//! reverse-mode autodiff engine, scores every training sample by the variance
//! of its input-pixel gradients across late-training checkpoints, and re-trains
//! under a sampling schedule that starts easy-biased and decays to a uniform
//! shuffle. Everything is `f64`, single-threaded per run, and deterministic
//! given a seed.

pub mod curriculum;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod vog;

pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
