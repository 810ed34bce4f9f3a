//! Explainable risk detection at desk scale.
//!
//! The crate promotes a small sequence classifier into an explainable
//! system built from three pieces:
//!
//! - a fine-tuning stage that augments training batches with
//!   explanation-guided variants of the risk samples ([`finetune`]),
//! - six feature-attribution methods adjusted to score *intelligible
//!   components* (ICs) instead of raw matrix cells, plus a locally
//!   weighted ensemble over them ([`explain`], [`ensemble`]),
//! - a fidelity measurement suite (prediction drop, average masked
//!   prediction, intersection size, ROC/AUC against planted ground
//!   truth) ([`metrics`]).
//!
//! Everything runs on a synthetic token-sequence benchmark with planted
//! IC-level ground truth ([`task`]) and a minimal differentiable network
//! engine ([`net`]). The `finer` binary wires these into a reproducible
//! experiment pipeline ([`cli`], [`pipeline`]).

pub mod chart;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod finetune;
pub mod error;
pub mod explain;
pub mod ic;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod report;
pub mod seeds;
pub mod task;

pub use error::{Error, Result};
pub use matrix::Matrix;
