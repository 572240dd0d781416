//! Deterministic single-process simulator for client-supervised federated
//! learning.
//!
//! A single global network `g(Pᵀ h(x))` is trained with FedAvg while the
//! projection `P` is learned by a streaming LDA-style alignment that whitens
//! within-client scatter and tracks the leading directions of the global
//! correlation. The crate also ships the baselines (FedAvg, FedAvg with local
//! fine-tuning, local-only training), non-IID partitioners, evaluation
//! metrics and a reproducible experiment harness.
//!
//! Module map:
//!
//! * [`numerics`] dense tensors, symmetric eigensolver, a small MLP/conv
//!   substrate with hand-written backprop.
//! * [`ra`] representation alignment: scatter matrices, trace-ratio
//!   objective, exact LDA oracle and the incremental `S`/`Φ` learners.
//! * [`model`] the global network with a projection insertion point.
//! * [`data`] IDX loading, synthetic corpora and federated partitioners.
//! * [`federation`] round engine, aggregation and strategies.
//! * [`metrics`] accuracy, weighted F1, weighted one-vs-rest AUC, summaries.
//! * [`harness`] experiment configuration, CSV/JSON output, checkpoints, CLI.

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod ra;
pub mod rng;

pub use error::{FedError, Result};
