//! Open-set federated intrusion detection for vehicular networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] turns packet summaries or flow CSV exports into normalised
//!   feature vectors and materialises the 0-day holdout scenarios.
//! * [`nn`] is a small dense network engine with manual backpropagation.
//! * [`detector`] is the benign-only autoencoder with a median/MAD threshold.
//! * [`classifier`] is the Deep-MCDD open-set classifier.
//! * [`federated`] holds local updates, differential privacy, update
//!   validation and FedAvg.
//! * [`chain`] simulates the consortium chain and its proof-of-accuracy
//!   consensus over an in-memory message bus.
//! * [`eval`] computes metrics and drives the experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod classifier;
mod codec;
pub mod config;
pub mod data;
pub mod detector;
pub mod eval;
pub mod federated;
pub mod nn;

pub use chain::{Block, Ledger, NodeId, SimConfig, SimOutcome, Transaction};
pub use classifier::{ClassificationResult, McddModel, Outcome};
pub use config::ExperimentConfig;
pub use data::{FlowFeatureVector, FlowKey, Label, PacketRecord, TimeWindow};
pub use detector::{DetectionVerdict, DetectorModel};
pub use eval::{ConfusionCounts, ScenarioReport, ThresholdMetrics};
pub use nn::{Activation, Architecture, ParamVector, TrainConfig};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic sub-seed for an independent random stream.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
