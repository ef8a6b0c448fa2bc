//! Deterministic edge-learning simulator for binary frame-error prediction.
//!
//! Every edge device owns a small train/test partition. The crate trains
//! per-device models with seven methods (local only, FedAvg, DP-FedAvg,
//! distillation from a teacher trained on real pooled data, on SMOTE-pooled
//! data, the SMOTE-distill-then-fine-tune variant, and a three-way
//! majority-vote ensemble), then scores them per device and per frame.
//!
//! All randomness derives from one master seed through [`rng::Streams`], so
//! runs are reproducible bit-for-bit, with or without the `parallel` feature.

pub mod dataio;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod federated;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod smote;

pub use error::{Error, Result};
