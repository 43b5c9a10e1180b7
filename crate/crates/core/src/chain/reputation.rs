//! Per-node gain history, exclusion and role rotation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::crypto::NodeId;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reputation {
    /// `(round, gain)` for every round the node worked.
    pub history: Vec<(u64, f64)>,
    pub consecutive_negative: u32,
    pub excluded: bool,
    pub excluded_at: Option<u64>,
}

impl Reputation {
    pub fn total_gain(&self) -> f64 {
        self.history.iter().map(|(_, g)| g).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationLedger {
    /// Consecutive negative rounds that trigger exclusion.
    pub window: u32,
    pub nodes: BTreeMap<NodeId, Reputation>,
}

impl ReputationLedger {
    pub fn new(window: u32) -> Self {
        Self {
            window,
            nodes: BTreeMap::new(),
        }
    }

    /// Records a worked round. Negative gains extend the streak, zero or
    /// positive gains reset it.
    pub fn update(&mut self, node: NodeId, round: u64, gain: f64) {
        let r = self.nodes.entry(node).or_default();
        r.history.push((round, gain));
        if gain < 0.0 {
            r.consecutive_negative += 1;
        } else {
            r.consecutive_negative = 0;
        }
        if !r.excluded && self.window > 0 && r.consecutive_negative >= self.window {
            r.excluded = true;
            r.excluded_at = Some(round);
        }
    }

    pub fn is_excluded(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|r| r.excluded)
    }

    pub fn excluded(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().filter(|(_, r)| r.excluded).map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    /// Ranked; the first is the designated miner.
    pub validators: Vec<NodeId>,
    pub workers: Vec<NodeId>,
}

impl RoleAssignment {
    pub fn miner(&self) -> NodeId {
        self.validators[0]
    }

    /// Validators `0..n` by id and the miner at the lowest id.
    pub fn bootstrap(active: &[NodeId], n_validators: usize) -> Result<Self, RotationError> {
        let mut ids = active.to_vec();
        ids.sort_unstable();
        if ids.len() < n_validators {
            return Err(RotationError {
                eligible: ids.len(),
                needed: n_validators,
            });
        }
        let workers = ids.split_off(n_validators);
        Ok(Self {
            validators: ids,
            workers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("only {eligible} eligible active nodes, {needed} validators required")]
pub struct RotationError {
    pub eligible: usize,
    pub needed: usize,
}

/// Next round's roles.
///
/// Validators are the top `n_validators` workers by this round's gain
/// (ties by lower id); a shortfall is filled from the previous validators,
/// then from any other eligible node, by id. Excluded nodes get no role.
pub fn rotate_roles(
    ledger: &ReputationLedger,
    worker_gains: &BTreeMap<NodeId, f64>,
    previous_validators: &[NodeId],
    active: &[NodeId],
    n_validators: usize,
) -> Result<RoleAssignment, RotationError> {
    let eligible: BTreeSet<NodeId> = active.iter().copied().filter(|n| !ledger.is_excluded(*n)).collect();
    if eligible.len() < n_validators {
        return Err(RotationError {
            eligible: eligible.len(),
            needed: n_validators,
        });
    }
    let mut ranked: Vec<(NodeId, f64)> = worker_gains
        .iter()
        .filter(|(n, _)| eligible.contains(n))
        .map(|(n, g)| (*n, *g))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut validators: Vec<NodeId> = ranked.iter().take(n_validators).map(|(n, _)| *n).collect();
    let mut prev: Vec<NodeId> = previous_validators.to_vec();
    prev.sort_unstable();
    for n in prev.into_iter().chain(eligible.iter().copied()) {
        if validators.len() == n_validators {
            break;
        }
        if eligible.contains(&n) && !validators.contains(&n) {
            validators.push(n);
        }
    }
    let workers = eligible.into_iter().filter(|n| !validators.contains(n)).collect();
    Ok(RoleAssignment { validators, workers })
}
