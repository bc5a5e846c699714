//! Multi-label sequence classification toolkit.
//!
//! A model is a pipeline of four swappable stages: a pooling encoder that
//! collapses a `T×D` frame sequence into a vector, a classification head
//! producing per-class probabilities, an optional label-correlation mixing
//! layer, and a loss. All of it runs on the small reverse-mode tape in
//! [`numerics`], in 64-bit floating point.

pub mod classifier;
pub mod data;
pub mod error;
pub mod labelgraph;
pub mod loss;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod pooling;
pub mod trainer;

pub use error::{Error, Result};
