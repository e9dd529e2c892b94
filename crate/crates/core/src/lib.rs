//! Federated throughput prediction for cellular clients.
//!
//! A two-layer LSTM is bootstrapped on a legacy-network trace, then its first
//! layer is refined across clients with federated averaging while the second
//! LSTM layer and the dense head stay on each client. The crate also ships the
//! preprocessing pipeline, regression metrics and baselines, and a chunk-level
//! ABR streaming simulator that consumes any throughput predictor.

pub mod abr;
pub mod error;
pub mod eval;
pub mod federation;
pub mod nn;
pub mod preprocess;
pub mod trace;

pub use error::{Error, Result};
