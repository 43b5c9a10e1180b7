//! Deterministic in-memory message bus on a tick clock.
//!
//! Each directed edge has a fixed latency drawn from the seed. Dropped
//! transmissions are retried after `rto` ticks, up to `max_attempts`; every
//! attempt counts as a sent message. Duplicates arrive one tick after the
//! original.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::crypto::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub latency_min: u64,
    pub latency_max: u64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub dup_prob: f64,
    #[serde(default = "default_rto")]
    pub rto: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

fn default_rto() -> u64 {
    2
}

fn default_attempts() -> u32 {
    8
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latency_min: 1,
            latency_max: 2,
            drop_prob: 0.0,
            dup_prob: 0.0,
            rto: default_rto(),
            max_attempts: default_attempts(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.latency_min == 0 || self.latency_max < self.latency_min {
            return Err(format!(
                "latency range [{}, {}] must be non-empty and start at 1 or more",
                self.latency_min, self.latency_max
            ));
        }
        for (name, p) in [("drop_prob", self.drop_prob), ("dup_prob", self.dup_prob)] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if self.rto == 0 || self.max_attempts == 0 {
            return Err("rto and max_attempts must be positive".into());
        }
        Ok(())
    }

    /// Worst-case delivery delay of a message that is not lost.
    pub fn worst_delay(&self) -> u64 {
        self.latency_max + (self.max_attempts as u64 - 1) * self.rto + 1
    }
}

/// Message categories tracked by the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgClass {
    /// Worker to validator transaction submission.
    Transaction,
    /// Validator to validator and miner broadcasts.
    Consensus,
    /// Finalised block distribution to non-validators.
    Propagation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetCounters {
    pub sent: BTreeMap<MsgClass, u64>,
    pub dropped: u64,
    pub lost: u64,
    pub duplicated: u64,
}

impl NetCounters {
    pub fn of(&self, c: MsgClass) -> u64 {
        self.sent.get(&c).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &NetCounters) {
        for (k, v) in &other.sent {
            *self.sent.entry(*k).or_default() += v;
        }
        self.dropped += other.dropped;
        self.lost += other.lost;
        self.duplicated += other.duplicated;
    }
}

pub struct Bus<M> {
    cfg: NetConfig,
    seed: u64,
    now: u64,
    seq: u64,
    edge_seq: BTreeMap<(NodeId, NodeId), u64>,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    payloads: BTreeMap<u64, (NodeId, NodeId, M)>,
    pub counters: NetCounters,
}

fn unit(seed: u64, parts: &[u64]) -> f64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    (u64::from_le_bytes(d[..8].try_into().unwrap()) >> 11) as f64 / (1u64 << 53) as f64
}

impl<M: Clone> Bus<M> {
    pub fn new(cfg: NetConfig, seed: u64) -> Self {
        Self {
            cfg,
            seed,
            now: 0,
            seq: 0,
            edge_seq: BTreeMap::new(),
            queue: BinaryHeap::new(),
            payloads: BTreeMap::new(),
            counters: NetCounters::default(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Fixed latency of the directed edge.
    pub fn latency(&self, from: NodeId, to: NodeId) -> u64 {
        let span = self.cfg.latency_max - self.cfg.latency_min + 1;
        let u = unit(self.seed, &[0, from.0 as u64, to.0 as u64]);
        self.cfg.latency_min + ((u * span as f64) as u64).min(span - 1)
    }

    fn push(&mut self, at: u64, from: NodeId, to: NodeId, msg: M) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq)));
        self.payloads.insert(self.seq, (from, to, msg));
    }

    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M, class: MsgClass) {
        let n = {
            let e = self.edge_seq.entry((from, to)).or_default();
            *e += 1;
            *e
        };
        let lat = self.latency(from, to);
        let key = |tag: u64, attempt: u64| [tag, from.0 as u64, to.0 as u64, n, attempt];
        let mut delay = None;
        for attempt in 0..self.cfg.max_attempts as u64 {
            *self.counters.sent.entry(class).or_default() += 1;
            if self.cfg.drop_prob > 0.0 && unit(self.seed, &key(1, attempt)) < self.cfg.drop_prob {
                self.counters.dropped += 1;
                continue;
            }
            delay = Some(attempt * self.cfg.rto + lat);
            break;
        }
        let Some(d) = delay else {
            self.counters.lost += 1;
            return;
        };
        let at = self.now + d;
        if self.cfg.dup_prob > 0.0 && unit(self.seed, &key(2, 0)) < self.cfg.dup_prob {
            self.counters.duplicated += 1;
            self.push(at + 1, from, to, msg.clone());
        }
        self.push(at, from, to, msg);
    }

    pub fn broadcast(&mut self, from: NodeId, to: &[NodeId], msg: &M, class: MsgClass) {
        for &t in to {
            if t != from {
                self.send(from, t, msg.clone(), class);
            }
        }
    }

    /// Messages due at the current tick, in send order.
    pub fn drain_due(&mut self) -> Vec<(NodeId, NodeId, M)> {
        let mut out = Vec::new();
        while let Some(Reverse((at, seq))) = self.queue.peek().copied() {
            if at > self.now {
                break;
            }
            self.queue.pop();
            out.push(self.payloads.remove(&seq).expect("queued payload"));
        }
        out
    }

    pub fn advance(&mut self) {
        self.now += 1;
    }

    pub fn idle(&self) -> bool {
        self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_per_edge_and_fixed_latency() {
        let mut bus: Bus<u32> = Bus::new(
            NetConfig {
                latency_min: 1,
                latency_max: 4,
                ..NetConfig::default()
            },
            3,
        );
        let lat = bus.latency(NodeId(1), NodeId(2));
        for i in 0..5 {
            bus.send(NodeId(1), NodeId(2), i, MsgClass::Consensus);
        }
        let mut got = Vec::new();
        for _ in 0..=lat {
            got.extend(bus.drain_due().into_iter().map(|(_, _, m)| m));
            if got.is_empty() {
                assert!(bus.now() < lat);
            }
            bus.advance();
        }
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
        assert_eq!(bus.counters.of(MsgClass::Consensus), 5);
    }

    #[test]
    fn drops_retry_and_count() {
        let cfg = NetConfig {
            drop_prob: 0.5,
            max_attempts: 30,
            ..NetConfig::default()
        };
        let mut bus: Bus<u32> = Bus::new(cfg, 9);
        for i in 0..200 {
            bus.send(NodeId(0), NodeId(1), i, MsgClass::Transaction);
        }
        let sent = bus.counters.of(MsgClass::Transaction);
        assert_eq!(sent, 200 + bus.counters.dropped);
        assert!(bus.counters.dropped > 100 && bus.counters.dropped < 300);
        assert_eq!(bus.counters.lost, 0);
        let mut n = 0;
        for _ in 0..200 {
            n += bus.drain_due().len();
            bus.advance();
        }
        assert_eq!(n, 200);
    }

    #[test]
    fn duplicates_delivered_twice() {
        let cfg = NetConfig {
            dup_prob: 0.999,
            ..NetConfig::default()
        };
        let mut bus: Bus<u32> = Bus::new(cfg, 1);
        bus.send(NodeId(0), NodeId(1), 7, MsgClass::Consensus);
        let mut n = 0;
        for _ in 0..10 {
            n += bus.drain_due().len();
            bus.advance();
        }
        assert_eq!(n, 2);
    }

    #[test]
    fn schedule_is_seeded() {
        let run = |seed| {
            let mut bus: Bus<u32> = Bus::new(
                NetConfig {
                    latency_max: 5,
                    drop_prob: 0.3,
                    ..NetConfig::default()
                },
                seed,
            );
            for i in 0..20 {
                bus.send(NodeId(i % 3), NodeId(3), i, MsgClass::Consensus);
            }
            let mut order = Vec::new();
            for _ in 0..60 {
                order.extend(bus.drain_due().into_iter().map(|(_, _, m)| m));
                bus.advance();
            }
            order
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }
}
