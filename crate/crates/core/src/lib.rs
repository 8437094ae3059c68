//! Multilevel attention transformer for deciding whether an image and a
//! piece of text agree, built from scratch on a small reverse-mode tensor
//! engine.
//!
//! The crate covers the whole pipeline: a synthetic cross-modal benchmark
//! and image/manifest I/O ([`data`]), patch and text embeddings
//! ([`embed`]), pre-norm transformer encoder blocks ([`nn`]), the joint
//! visual-semantic and self-attention fusion head ([`model`]), training with
//! Adam and checkpointing ([`train`]), evaluation ([`metrics`]), and the
//! ablation and latency harnesses ([`bench`]).

pub mod bench;
pub mod cli;
pub mod data;
pub mod embed;
pub mod error;
mod fsutil;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{EtmaError, Result};
