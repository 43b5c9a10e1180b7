//! Consortium chain with proof-of-accuracy consensus.

mod consensus;
mod crypto;
mod ledger;
mod net;
mod reputation;
mod sim;

pub use consensus::{
    run_consensus, score_round, AuditEvent, ConsensusConfig, Fault, RoundOutcome, RoundSpec, ScoreReport, Scorer,
};
pub use crypto::{CryptoError, Identity, Keyring, NodeId, NodeKind, SignatureScheme};
pub use ledger::{
    block_digest, canonical_order, quorum, sha256, tx_signing_bytes, Block, ChainError, Endorsement, Hash32, Ledger,
    ScoredTx, Sig, Transaction, TxKind,
};
pub use net::{Bus, MsgClass, NetConfig, NetCounters};
pub use reputation::{rotate_roles, Reputation, ReputationLedger, RoleAssignment, RotationError};
pub use sim::{
    ac_accuracy, acc_gain, ad_accuracy, run_training, AggregationRule, NodeFault, RoundRecord, SimConfig, SimData,
    SimError, SimOutcome, StopReason, Topology,
};
