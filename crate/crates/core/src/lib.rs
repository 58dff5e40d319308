//! Mixture-of-experts fusion of multi-layer frozen-encoder features for
//! fake audio detection.
//!
//! Precomputed features of a 24-layer speech encoder (plus its CNN feature
//! encoder output) are fused by Top-K gated expert groups, one disjoint
//! group per layer, with the gate driven by the last hidden state. A small
//! pooling head turns the fused features into a countermeasure score.
//!
//! The crate covers the whole desk-scale pipeline: a minimal autodiff core
//! ([`numkit`]), the fusion module ([`fusion`]), the scoring head
//! ([`classifier`]), the MFLF feature format and a synthetic generator
//! ([`data`]), AdamW training with a warm-up cosine schedule
//! ([`train`]), equal error rate ([`metrics`]) and the commands behind the
//! `moefuse` binary ([`pipeline`]).

pub mod classifier;
pub mod data;
pub mod error;
pub mod fusion;
mod init;
mod label;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
pub use fusion::{LayerFeatureBatch, MoeConfig};
pub use label::Label;
pub use model::MoeFusionModel;
