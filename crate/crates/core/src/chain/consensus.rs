//! One proof-of-accuracy consensus round on the message bus.
//!
//! Schedule, with `p` the phase length (at least the worst delivery delay):
//!
//! * tick 0: workers submit signed transactions to every validator;
//! * tick `p`: each validator scores its pool and broadcasts a signed
//!   score report; validators echo every distinct report once, so a
//!   validator that sends different reports to different peers is seen
//!   equivocating by everyone and its reports are ignored;
//! * tick `3p`: each validator freezes its scored list (gains summed over
//!   the reports it holds) and the resulting block digest;
//! * from `3p + 1`, attempts of `4p` ticks each. Attempt `a` is led by
//!   `validators[a % n]`, which proposes, collects endorsements and, at
//!   quorum, commits. A validator endorses only its own frozen digest.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::crypto::{Identity, Keyring, NodeId};
use super::ledger::{canonical_order, quorum, Block, Endorsement, Hash32, ScoredTx, Sig, Transaction};
use super::net::{Bus, MsgClass, NetConfig, NetCounters};

/// A validator's accuracy gain for one transaction.
pub trait Scorer {
    fn gain(&self, validator: NodeId, tx: &Transaction) -> f64;
}

impl<F: Fn(NodeId, &Transaction) -> f64> Scorer for F {
    fn gain(&self, validator: NodeId, tx: &Transaction) -> f64 {
        self(validator, tx)
    }
}

/// Injected validator misbehaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Fault {
    /// Silent for the whole round.
    Crash,
    /// Never endorses; as miner, never proposes.
    WithholdEndorsement,
    /// Sends a different score report to half of its peers.
    EquivocateScore,
    /// Reports the given gain for every transaction.
    LieScore(f64),
    /// As miner, inflates every gain; as validator, endorses anything.
    TamperProposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Phase length in ticks; `None` uses the bus worst-case delay.
    #[serde(default)]
    pub phase: Option<u64>,
    /// Attempt limit per round; `None` allows `2n`.
    #[serde(default)]
    pub max_attempts: Option<u32>,
    /// Reported-vs-own gain gap above which the audit log flags a reporter.
    #[serde(default = "default_gap")]
    pub gap_tolerance: f64,
    #[serde(default)]
    pub net: NetConfig,
}

fn default_gap() -> f64 {
    0.25
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            phase: None,
            max_attempts: None,
            gap_tolerance: default_gap(),
            net: NetConfig::default(),
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.net.validate()?;
        if let Some(p) = self.phase {
            if p < self.net.worst_delay() {
                return Err(format!(
                    "phase {p} shorter than worst-case delivery delay {}",
                    self.net.worst_delay()
                ));
            }
        }
        if self.max_attempts == Some(0) {
            return Err("max_attempts must be positive".into());
        }
        Ok(())
    }

    pub fn phase_ticks(&self) -> u64 {
        self.phase.unwrap_or_else(|| self.net.worst_delay())
    }
}

/// A validator's signed gains for the transactions it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub validator: NodeId,
    pub round: u64,
    pub gains: Vec<(Hash32, f64)>,
    pub signature: Sig,
}

fn report_bytes(validator: NodeId, round: u64, gains: &[(Hash32, f64)]) -> Vec<u8> {
    let mut v = Vec::with_capacity(24 + gains.len() * 40);
    v.extend_from_slice(b"osfl-score");
    v.extend_from_slice(&round.to_le_bytes());
    v.extend_from_slice(&validator.0.to_le_bytes());
    v.extend_from_slice(&(gains.len() as u32).to_le_bytes());
    for (id, g) in gains {
        v.extend_from_slice(&id.0);
        v.extend_from_slice(&g.to_bits().to_le_bytes());
    }
    v
}

impl ScoreReport {
    pub fn new(signer: &Identity, round: u64, gains: Vec<(Hash32, f64)>) -> Self {
        let signature = Sig(signer.sign(&report_bytes(signer.id, round, &gains)));
        Self {
            validator: signer.id,
            round,
            gains,
            signature,
        }
    }

    pub fn verify(&self, keyring: &Keyring) -> bool {
        keyring.verify(
            self.validator,
            &report_bytes(self.validator, self.round, &self.gains),
            &self.signature.0,
        )
    }

    pub fn gain(&self, id: &Hash32) -> Option<f64> {
        self.gains.iter().find(|(t, _)| t == id).map(|(_, g)| *g)
    }
}

/// Sums reported gains per pooled transaction.
///
/// Reporters are visited in validator order so every node adds in the same
/// sequence; a missing report or entry contributes zero.
pub fn score_round(
    validators: &[NodeId],
    pool: &[&Transaction],
    reports: &BTreeMap<NodeId, ScoreReport>,
) -> Vec<ScoredTx> {
    let mut out: Vec<ScoredTx> = pool
        .iter()
        .map(|tx| {
            let id = tx.id();
            let total = validators
                .iter()
                .filter_map(|v| reports.get(v))
                .map(|r| r.gain(&id).unwrap_or(0.0))
                .sum();
            ScoredTx::from_tx(tx, total)
        })
        .collect();
    canonical_order(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Equivocation { validator: NodeId },
    ScoreGap { reporter: NodeId, max_gap: f64 },
    InvalidTransaction { author: NodeId },
    Discarded { attempt: u32, miner: NodeId },
}

/// The inputs of one round.
pub struct RoundSpec<'a> {
    pub round: u64,
    /// Ranked validator set; index 0 leads attempt 0.
    pub validators: &'a [NodeId],
    /// Non-validator active nodes that receive the finalised block.
    pub observers: &'a [NodeId],
    pub txs: &'a [Transaction],
    pub faults: &'a BTreeMap<NodeId, Fault>,
    pub tip: &'a Block,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutcome {
    /// The block committed by the fault-free validators, if any.
    pub block: Option<Block>,
    /// Every node's committed block.
    pub commits: BTreeMap<NodeId, Block>,
    /// Every block that reached quorum at its miner.
    pub finalized: Vec<Block>,
    pub attempts: u32,
    pub finalized_attempt: Option<u32>,
    /// Ticks until the last fault-free validator committed.
    pub ticks: u64,
    pub counters: NetCounters,
    pub audit: Vec<AuditEvent>,
}

#[derive(Clone)]
enum Msg {
    Tx(Arc<Transaction>),
    Score(Arc<ScoreReport>),
    Propose { attempt: u32, block: Arc<Block> },
    Endorse { attempt: u32, hash: Hash32, e: Endorsement },
    Commit(Arc<Block>),
}

#[derive(Default)]
struct Collect {
    block: Option<Block>,
    endorsements: Vec<Endorsement>,
    done: bool,
}

#[derive(Default)]
struct Node {
    fault: Option<Fault>,
    pool: BTreeMap<Hash32, Arc<Transaction>>,
    reports: BTreeMap<NodeId, Vec<Arc<ScoreReport>>>,
    frozen: Option<(Vec<ScoredTx>, Hash32)>,
    endorsed: Option<Hash32>,
    collecting: BTreeMap<u32, Collect>,
    committed: Option<Block>,
}

struct Engine<'a> {
    spec: &'a RoundSpec<'a>,
    ids: &'a BTreeMap<NodeId, Identity>,
    keyring: &'a Keyring,
    nodes: BTreeMap<NodeId, Node>,
    bus: Bus<Msg>,
    q: usize,
    gap_tolerance: f64,
    finalized: Vec<(u32, Block)>,
    equivocators: BTreeSet<NodeId>,
    gaps: BTreeMap<NodeId, f64>,
    invalid: BTreeSet<NodeId>,
}

/// Runs one round. `identities` must hold every validator and observer.
pub fn run_consensus<S: Scorer>(
    spec: &RoundSpec<'_>,
    identities: &BTreeMap<NodeId, Identity>,
    keyring: &Keyring,
    scorer: &S,
    cfg: &ConsensusConfig,
    seed: u64,
) -> RoundOutcome {
    let n = spec.validators.len();
    let mut nodes = BTreeMap::new();
    for v in spec.validators {
        nodes.insert(
            *v,
            Node {
                fault: spec.faults.get(v).copied(),
                ..Node::default()
            },
        );
    }
    for o in spec.observers {
        nodes.entry(*o).or_default();
    }
    let mut e = Engine {
        spec,
        ids: identities,
        keyring,
        nodes,
        bus: Bus::new(cfg.net.clone(), seed),
        q: quorum(n),
        gap_tolerance: cfg.gap_tolerance,
        finalized: Vec::new(),
        equivocators: BTreeSet::new(),
        gaps: BTreeMap::new(),
        invalid: BTreeSet::new(),
    };
    let p = cfg.phase_ticks();
    let first = 3 * p + 1;
    let window = 4 * p;
    let max_attempts = cfg.max_attempts.unwrap_or(2 * n as u32);
    let end = first + max_attempts as u64 * window;
    let honest: Vec<NodeId> = spec
        .validators
        .iter()
        .copied()
        .filter(|v| !spec.faults.contains_key(v))
        .collect();

    for tx in spec.txs {
        let m = Msg::Tx(Arc::new(tx.clone()));
        e.bus.broadcast(tx.author, spec.validators, &m, MsgClass::Transaction);
    }

    let mut attempts = 0;
    let mut done_at = None;
    let mut discarded = Vec::new();
    loop {
        let t = e.bus.now();
        for (from, to, m) in e.bus.drain_due() {
            e.handle(from, to, m);
        }
        if t == p {
            e.send_reports(scorer);
        }
        if t == 3 * p {
            e.freeze(scorer);
        }
        if done_at.is_none() && t >= first && (t - first).is_multiple_of(window) && attempts < max_attempts {
            e.start_attempt(attempts);
            attempts += 1;
        }
        if done_at.is_none() && honest.iter().all(|v| e.nodes[v].committed.is_some()) {
            done_at = Some(t);
        }
        if (done_at.is_some() || t >= end) && e.bus.idle() {
            break;
        }
        e.bus.advance();
    }

    let finalized_attempt = e.finalized.iter().map(|(a, _)| *a).min();
    for a in 0..finalized_attempt.unwrap_or(attempts) {
        discarded.push(AuditEvent::Discarded {
            attempt: a,
            miner: spec.validators[a as usize % n],
        });
    }
    let commits: BTreeMap<NodeId, Block> = e
        .nodes
        .iter()
        .filter_map(|(id, s)| s.committed.clone().map(|b| (*id, b)))
        .collect();
    let block = honest.iter().find_map(|v| commits.get(v).cloned());
    let mut audit: Vec<AuditEvent> = e
        .invalid
        .iter()
        .map(|a| AuditEvent::InvalidTransaction { author: *a })
        .collect();
    audit.extend(
        e.equivocators
            .iter()
            .map(|v| AuditEvent::Equivocation { validator: *v }),
    );
    audit.extend(e.gaps.iter().map(|(r, g)| AuditEvent::ScoreGap {
        reporter: *r,
        max_gap: *g,
    }));
    audit.extend(discarded);
    RoundOutcome {
        block,
        commits,
        finalized: e.finalized.into_iter().map(|(_, b)| b).collect(),
        attempts,
        finalized_attempt,
        ticks: done_at.unwrap_or(e.bus.now()),
        counters: e.bus.counters,
        audit,
    }
}

impl Engine<'_> {
    fn identity(&self, id: NodeId) -> &Identity {
        self.ids.get(&id).unwrap_or_else(|| panic!("no identity for {id}"))
    }

    fn is_validator(&self, id: NodeId) -> bool {
        self.spec.validators.contains(&id)
    }

    fn active(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|s| s.fault != Some(Fault::Crash))
    }

    fn peers(&self, me: NodeId) -> Vec<NodeId> {
        self.spec.validators.iter().copied().filter(|v| *v != me).collect()
    }

    fn handle(&mut self, from: NodeId, to: NodeId, m: Msg) {
        if !self.active(to) {
            return;
        }
        match m {
            Msg::Tx(tx) => self.on_tx(to, tx),
            Msg::Score(r) => self.on_score(to, from, r),
            Msg::Propose { attempt, block } => self.on_propose(to, from, attempt, block),
            Msg::Endorse { attempt, hash, e } => self.on_endorse(to, attempt, hash, e),
            Msg::Commit(b) => self.on_commit(to, b),
        }
    }

    fn on_tx(&mut self, me: NodeId, tx: Arc<Transaction>) {
        if !self.is_validator(me) {
            return;
        }
        if tx.round != self.spec.round || self.is_validator(tx.author) || !tx.verify(self.keyring) {
            self.invalid.insert(tx.author);
            return;
        }
        self.nodes.get_mut(&me).unwrap().pool.entry(tx.id()).or_insert(tx);
    }

    fn on_score(&mut self, me: NodeId, from: NodeId, r: Arc<ScoreReport>) {
        let s = &self.nodes[&me];
        if !self.is_validator(me) || s.frozen.is_some() || r.round != self.spec.round {
            return;
        }
        if !self.is_validator(r.validator) || !r.verify(self.keyring) {
            return;
        }
        let seen = s
            .reports
            .get(&r.validator)
            .is_some_and(|v| v.iter().any(|x| x.signature == r.signature));
        if seen {
            return;
        }
        self.nodes
            .get_mut(&me)
            .unwrap()
            .reports
            .entry(r.validator)
            .or_default()
            .push(r.clone());
        if r.validator != me {
            let to: Vec<NodeId> = self
                .peers(me)
                .into_iter()
                .filter(|v| *v != from && *v != r.validator)
                .collect();
            self.bus.broadcast(me, &to, &Msg::Score(r), MsgClass::Consensus);
        }
    }

    fn send_reports<S: Scorer>(&mut self, scorer: &S) {
        for &v in self.spec.validators {
            if !self.active(v) {
                continue;
            }
            let fault = self.nodes[&v].fault;
            let own: Vec<(Hash32, f64)> = self.nodes[&v]
                .pool
                .iter()
                .map(|(id, tx)| {
                    let g = match fault {
                        Some(Fault::LieScore(x)) => x,
                        _ => scorer.gain(v, tx),
                    };
                    (*id, g)
                })
                .collect();
            let me = self.identity(v).clone();
            let report = Arc::new(ScoreReport::new(&me, self.spec.round, own.clone()));
            self.nodes
                .get_mut(&v)
                .unwrap()
                .reports
                .entry(v)
                .or_default()
                .push(report.clone());
            let peers = self.peers(v);
            if fault == Some(Fault::EquivocateScore) {
                let alt: Vec<(Hash32, f64)> = own.iter().map(|(id, g)| (*id, -g - 1.0)).collect();
                let alt = Arc::new(ScoreReport::new(&me, self.spec.round, alt));
                let (a, b) = peers.split_at(peers.len() / 2);
                self.bus.broadcast(v, a, &Msg::Score(report), MsgClass::Consensus);
                self.bus.broadcast(v, b, &Msg::Score(alt), MsgClass::Consensus);
            } else {
                self.bus.broadcast(v, &peers, &Msg::Score(report), MsgClass::Consensus);
            }
        }
    }

    fn freeze<S: Scorer>(&mut self, scorer: &S) {
        let spec = self.spec;
        let tip = spec.tip;
        for &v in spec.validators {
            if !self.active(v) {
                continue;
            }
            let s = &self.nodes[&v];
            let mut reports = BTreeMap::new();
            for (r, list) in &s.reports {
                if list.len() > 1 {
                    self.equivocators.insert(*r);
                    continue;
                }
                reports.insert(*r, (*list[0]).clone());
            }
            let pool: Vec<&Transaction> = s.pool.values().map(|t| t.as_ref()).collect();
            let list = score_round(spec.validators, &pool, &reports);
            if s.fault.is_none() {
                for (r, rep) in &reports {
                    if *r == v {
                        continue;
                    }
                    let gap = pool
                        .iter()
                        .map(|tx| (rep.gain(&tx.id()).unwrap_or(0.0) - scorer.gain(v, tx)).abs())
                        .fold(0.0, f64::max);
                    if gap > self.gap_tolerance {
                        let e = self.gaps.entry(*r).or_insert(0.0);
                        *e = e.max(gap);
                    }
                }
            }
            let digest = super::ledger::block_digest(tip.height + 1, &tip.hash, spec.round, spec.validators, &list);
            self.nodes.get_mut(&v).unwrap().frozen = Some((list, digest));
        }
    }

    fn start_attempt(&mut self, attempt: u32) {
        let spec = self.spec;
        let m = spec.validators[attempt as usize % spec.validators.len()];
        if !self.active(m) {
            return;
        }
        let s = &self.nodes[&m];
        if let Some(b) = &s.committed {
            let msg = Msg::Commit(Arc::new(b.clone()));
            let peers = self.peers(m);
            self.bus.broadcast(m, &peers, &msg, MsgClass::Consensus);
            return;
        }
        let Some((list, _)) = &s.frozen else { return };
        let mut txs = list.clone();
        let mut round = spec.round;
        match s.fault {
            Some(Fault::WithholdEndorsement) => return,
            Some(Fault::TamperProposal) => {
                if txs.is_empty() {
                    round += 1;
                }
                for t in &mut txs {
                    t.acc_gain += 1.0;
                }
            }
            _ => {}
        }
        let me = self.identity(m).clone();
        let block = Block::propose(
            &me,
            spec.tip.height + 1,
            spec.tip.hash,
            round,
            spec.validators.to_vec(),
            txs,
        );
        let own = block.endorse(&me);
        let hash = block.hash;
        let c = self.nodes.get_mut(&m).unwrap().collecting.entry(attempt).or_default();
        c.block = Some(block.clone());
        let peers = self.peers(m);
        self.bus.broadcast(
            m,
            &peers,
            &Msg::Propose {
                attempt,
                block: Arc::new(block),
            },
            MsgClass::Consensus,
        );
        let s = self.nodes.get_mut(&m).unwrap();
        if s.endorsed.is_none_or(|h| h == hash) {
            s.endorsed = Some(hash);
            self.on_endorse(m, attempt, hash, own);
        }
    }

    fn on_propose(&mut self, me: NodeId, from: NodeId, attempt: u32, block: Arc<Block>) {
        if !self.is_validator(me) {
            return;
        }
        let spec = self.spec;
        let s = &self.nodes[&me];
        if let Some(b) = &s.committed {
            if s.fault.is_none() {
                self.bus
                    .send(me, from, Msg::Commit(Arc::new(b.clone())), MsgClass::Consensus);
            }
            return;
        }
        let ok = match s.fault {
            Some(Fault::WithholdEndorsement) => false,
            Some(Fault::TamperProposal) => true,
            _ => {
                let expected = spec.validators[attempt as usize % spec.validators.len()];
                from == expected
                    && block.miner == expected
                    && block.recompute_hash() == block.hash
                    && block.miner_signature_valid(self.keyring)
                    && s.frozen.as_ref().is_some_and(|(_, d)| *d == block.hash)
                    && s.endorsed.is_none_or(|h| h == block.hash)
            }
        };
        if !ok {
            return;
        }
        let me_id = self.identity(me).clone();
        let e = block.endorse(&me_id);
        self.nodes.get_mut(&me).unwrap().endorsed = Some(block.hash);
        self.bus.send(
            me,
            from,
            Msg::Endorse {
                attempt,
                hash: block.hash,
                e,
            },
            MsgClass::Consensus,
        );
    }

    fn on_endorse(&mut self, me: NodeId, attempt: u32, hash: Hash32, e: Endorsement) {
        let keyring = self.keyring;
        let q = self.q;
        let Some(c) = self.nodes.get_mut(&me).and_then(|s| s.collecting.get_mut(&attempt)) else {
            return;
        };
        let Some(block) = &c.block else { return };
        if c.done || block.hash != hash || !block.endorsement_valid(&e, keyring) {
            return;
        }
        if c.endorsements.iter().any(|x| x.validator == e.validator) {
            return;
        }
        c.endorsements.push(e);
        if c.endorsements.len() < q {
            return;
        }
        c.done = true;
        let mut b = block.clone();
        b.endorsements = c.endorsements.clone();
        b.endorsements.sort_by_key(|x| x.validator);
        self.finalized.push((attempt, b.clone()));
        let b = Arc::new(b);
        self.on_commit(me, b.clone());
        let peers = self.peers(me);
        self.bus
            .broadcast(me, &peers, &Msg::Commit(b.clone()), MsgClass::Consensus);
        self.bus
            .broadcast(me, self.spec.observers, &Msg::Commit(b), MsgClass::Propagation);
    }

    fn on_commit(&mut self, me: NodeId, b: Arc<Block>) {
        let tip = self.spec.tip;
        let s = &self.nodes[&me];
        if s.committed.is_some() {
            return;
        }
        let ok = b.height == tip.height + 1
            && b.prev_hash == tip.hash
            && b.recompute_hash() == b.hash
            && b.miner_signature_valid(self.keyring)
            && b.is_final(self.keyring);
        if ok {
            self.nodes.get_mut(&me).unwrap().committed = Some((*b).clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::crypto::{NodeKind, SignatureScheme};
    use super::super::ledger::TxKind;
    use super::*;

    struct Net {
        ids: BTreeMap<NodeId, Identity>,
        keyring: Keyring,
        validators: Vec<NodeId>,
        workers: Vec<NodeId>,
    }

    fn net(n_val: u32, n_work: u32) -> Net {
        let mut ids = BTreeMap::new();
        let mut keyring = Keyring::new();
        for i in 0..n_val + n_work {
            let id = Identity::generate(NodeId(i), NodeKind::MecActive, SignatureScheme::KeyedHash, 5);
            keyring.register(&id).unwrap();
            ids.insert(NodeId(i), id);
        }
        Net {
            ids,
            keyring,
            validators: (0..n_val).map(NodeId).collect(),
            workers: (n_val..n_val + n_work).map(NodeId).collect(),
        }
    }

    fn txs(n: &Net, round: u64) -> Vec<Transaction> {
        n.workers
            .iter()
            .map(|w| Transaction::new(&n.ids[w], TxKind::Ad, round, 10 + w.0 as u64, vec![w.0 as u8; 4]))
            .collect()
    }

    fn run(n: &Net, txs: &[Transaction], faults: &BTreeMap<NodeId, Fault>, cfg: &ConsensusConfig) -> RoundOutcome {
        let tip = Block::genesis(0, n.validators.clone());
        let spec = RoundSpec {
            round: 1,
            validators: &n.validators,
            observers: &n.workers,
            txs,
            faults,
            tip: &tip,
        };
        let scorer = |_: NodeId, _: &Transaction| 0.01;
        run_consensus(&spec, &n.ids, &n.keyring, &scorer, cfg, 11)
    }

    #[test]
    fn three_validators_sum_gains() {
        let n = net(3, 2);
        let o = run(&n, &txs(&n, 1), &BTreeMap::new(), &ConsensusConfig::default());
        let b = o.block.unwrap();
        assert_eq!(b.txs.len(), 2);
        for t in &b.txs {
            assert!((t.acc_gain - 0.03).abs() < 1e-15);
        }
        assert_eq!(o.finalized_attempt, Some(0));
        assert_eq!(o.commits.len(), 5);
    }

    #[test]
    fn liar_recorded_and_flagged() {
        let n = net(3, 1);
        let faults = [(NodeId(2), Fault::LieScore(-1.0))].into();
        let o = run(&n, &txs(&n, 1), &faults, &ConsensusConfig::default());
        let b = o.block.unwrap();
        assert!((b.txs[0].acc_gain + 0.98).abs() < 1e-12);
        assert!(o
            .audit
            .iter()
            .any(|a| matches!(a, AuditEvent::ScoreGap { reporter, .. } if *reporter == NodeId(2))));
    }

    #[test]
    fn invalid_signature_excluded() {
        let n = net(4, 3);
        let mut t = txs(&n, 1);
        t[1].signature.0[0] ^= 1;
        let o = run(&n, &t, &BTreeMap::new(), &ConsensusConfig::default());
        let b = o.block.unwrap();
        assert_eq!(b.txs.len(), 2);
        assert!(b.txs.iter().all(|x| x.author != t[1].author));
    }

    #[test]
    fn quorum_examples() {
        let n = net(4, 2);
        let t = txs(&n, 1);
        let o = run(&n, &t, &BTreeMap::new(), &ConsensusConfig::default());
        assert_eq!(o.block.as_ref().unwrap().endorsements.len(), 3);
        let one = [(NodeId(3), Fault::WithholdEndorsement)].into();
        let o = run(&n, &t, &one, &ConsensusConfig::default());
        assert_eq!(o.finalized_attempt, Some(0));
        let two = [
            (NodeId(2), Fault::WithholdEndorsement),
            (NodeId(3), Fault::WithholdEndorsement),
        ]
        .into();
        let cfg = ConsensusConfig {
            max_attempts: Some(4),
            ..ConsensusConfig::default()
        };
        let o = run(&n, &t, &two, &cfg);
        assert!(o.block.is_none() && o.finalized.is_empty());
        assert_eq!(o.attempts, 4);
        let discarded = o
            .audit
            .iter()
            .filter(|a| matches!(a, AuditEvent::Discarded { .. }))
            .count();
        assert_eq!(discarded, 4);
    }

    #[test]
    fn faulty_miner_rotates() {
        let n = net(4, 2);
        for f in [
            Fault::Crash,
            Fault::WithholdEndorsement,
            Fault::TamperProposal,
            Fault::EquivocateScore,
        ] {
            let faults = [(NodeId(0), f)].into();
            let o = run(&n, &txs(&n, 1), &faults, &ConsensusConfig::default());
            assert_eq!(o.finalized_attempt, Some(1), "{f:?}");
            assert_eq!(o.block.unwrap().miner, NodeId(1));
        }
    }

    #[test]
    fn equivocator_ignored() {
        let n = net(4, 2);
        let faults = [(NodeId(3), Fault::EquivocateScore)].into();
        let o = run(&n, &txs(&n, 1), &faults, &ConsensusConfig::default());
        assert!(o.audit.contains(&AuditEvent::Equivocation { validator: NodeId(3) }));
        for t in &o.block.unwrap().txs {
            assert!((t.acc_gain - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_pool_still_finalizes() {
        let n = net(4, 0);
        let o = run(&n, &[], &BTreeMap::new(), &ConsensusConfig::default());
        assert!(o.block.unwrap().txs.is_empty());
    }

    #[test]
    fn lossy_network_same_block() {
        let n = net(7, 4);
        let t = txs(&n, 1);
        let cfg = ConsensusConfig {
            net: NetConfig {
                latency_max: 3,
                drop_prob: 0.2,
                dup_prob: 0.1,
                ..NetConfig::default()
            },
            ..ConsensusConfig::default()
        };
        let clean = run(&n, &t, &BTreeMap::new(), &ConsensusConfig::default());
        let lossy = run(&n, &t, &BTreeMap::new(), &cfg);
        assert_eq!(clean.block.unwrap().hash, lossy.block.unwrap().hash);
        assert!(lossy.counters.dropped > 0);
    }
}
