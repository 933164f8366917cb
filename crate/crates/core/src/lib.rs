//! Siamese verification over precomputed feature vectors.
//!
//! A small shared backbone embeds each input vector, the two embeddings are
//! combined into `[(e1 - e2)^2, e1 * e2]`, and a logistic head scores the pair.
//! The crate covers the network with hand-written backprop, balanced-pair
//! training with Adam, feature file formats, evaluation metrics, and timing.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
