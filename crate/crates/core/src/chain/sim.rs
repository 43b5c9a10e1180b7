//! End-to-end training on the chain: CAV local updates, MEC validation and
//! aggregation, scored transactions, consensus, global refresh and role
//! rotation, repeated until the block gain settles.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::consensus::{run_consensus, AuditEvent, ConsensusConfig, Fault, RoundSpec, Scorer};
use super::crypto::{Identity, Keyring, NodeId, NodeKind, SignatureScheme};
use super::ledger::{Block, ChainError, Hash32, Ledger, Transaction, TxKind};
use super::net::{MsgClass, NetCounters};
use super::reputation::{rotate_roles, ReputationLedger, RoleAssignment, RotationError};
use crate::classifier::{ClassifierError, McddConfig, McddModel};
use crate::detector::{self, architecture_with_hidden, default_architecture};
use crate::federated::{
    self, fedavg, local_seed, Client, FedError, FederatedModel, LocalUpdateConfig, McddTask, ReconstructionTask,
    RoundConfig, ValidationPolicy,
};
use crate::nn::{ParamVector, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub n_mec: usize,
    pub n_cav: usize,
    /// Tolerated faulty validators; the validator set has `3f + 1` members.
    pub f: usize,
}

impl Topology {
    pub fn n_validators(&self) -> usize {
        3 * self.f + 1
    }
}

/// Which block transactions feed the global refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationRule {
    All,
    #[default]
    NonNegativeGain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFault {
    pub node: u32,
    pub fault: Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: Topology,
    pub scheme: SignatureScheme,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    pub max_rounds: u64,
    pub min_rounds: u64,
    pub stop_tolerance: f64,
    /// Consecutive negative rounds before exclusion.
    pub exclusion_window: u32,
    pub exclusion: bool,
    /// MEC-side loss-gap check on CAV updates.
    pub validation: ValidationPolicy,
    /// CAV local detector update.
    pub ad_local: LocalUpdateConfig,
    /// Detector hidden widths; `None` uses the default shape.
    #[serde(default)]
    pub ad_hidden: Option<Vec<usize>>,
    pub mad_multiplier: f64,
    /// MEC local classifier training.
    pub ac_local: TrainConfig,
    pub mcdd: McddConfig,
    /// MEC ids that sign-flip every update they submit.
    #[serde(default)]
    pub malicious: Vec<u32>,
    /// Consensus faults, applied while the node is a validator.
    #[serde(default)]
    pub faults: Vec<NodeFault>,
    #[serde(default)]
    pub aggregation: AggregationRule,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            topology: Topology {
                n_mec: 8,
                n_cav: 40,
                f: 1,
            },
            scheme: SignatureScheme::Ed25519,
            consensus: ConsensusConfig::default(),
            max_rounds: 12,
            min_rounds: 4,
            stop_tolerance: 0.001,
            exclusion_window: 2,
            exclusion: true,
            validation: ValidationPolicy::default(),
            ad_local: LocalUpdateConfig::plain(TrainConfig {
                epochs: 20,
                batch_size: 16,
                learning_rate: 0.1,
                seed: 0,
                grad_clip: Some(5.0),
            }),
            ad_hidden: None,
            mad_multiplier: detector::DEFAULT_MAD_MULTIPLIER,
            ac_local: TrainConfig {
                epochs: 10,
                batch_size: 16,
                learning_rate: 0.01,
                seed: 0,
                grad_clip: Some(5.0),
            },
            mcdd: McddConfig::default(),
            malicious: Vec::new(),
            faults: Vec::new(),
            aggregation: AggregationRule::NonNegativeGain,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let t = &self.topology;
        let bad = |m: String| Err(SimError::Config(m));
        if t.n_mec < t.n_validators() + 1 {
            return bad(format!(
                "{} MEC nodes cannot host {} validators and a worker",
                t.n_mec,
                t.n_validators()
            ));
        }
        if t.n_cav == 0 {
            return bad("at least one CAV is required".into());
        }
        if self.max_rounds == 0 || self.min_rounds > self.max_rounds {
            return bad(format!("rounds: min {} max {}", self.min_rounds, self.max_rounds));
        }
        if !(self.stop_tolerance >= 0.0) || !(self.mad_multiplier > 0.0) {
            return bad("stop_tolerance and mad_multiplier must be non-negative and positive".into());
        }
        if let Some(m) = self.malicious.iter().find(|m| **m as usize >= t.n_mec) {
            return bad(format!("malicious node {m} is not a MEC"));
        }
        if let Some(m) = self.faults.iter().find(|m| m.node as usize >= t.n_mec) {
            return bad(format!("faulty node {} is not a MEC", m.node));
        }
        self.consensus.validate().map_err(SimError::Config)?;
        self.ad_local.validate()?;
        self.mcdd.validate()?;
        self.ac_local.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("simulation halted in round {round}: {source}")]
    Halted { round: u64, source: RotationError },
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Local datasets. CAV `c` is attached to MEC `c % n_mec`.
pub struct SimData<'a> {
    /// Benign flows per CAV.
    pub cav_benign: Vec<Vec<&'a [f64]>>,
    /// Attack flows and dense labels per MEC.
    pub mec_attack: Vec<(Vec<&'a [f64]>, Vec<usize>)>,
    /// Shared benign reference batch.
    pub b_test: Vec<&'a [f64]>,
    /// Known attack ids, indexed by dense label.
    pub classes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GainSettled,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub validators: Vec<NodeId>,
    pub miner: NodeId,
    pub finalized: bool,
    pub attempts: u32,
    pub txs_in_block: usize,
    pub mean_gain: f64,
    pub worker_gains: BTreeMap<NodeId, f64>,
    pub cav_updates_accepted: usize,
    pub cav_updates_rejected: usize,
    pub consensus_messages: u64,
    pub transaction_messages: u64,
    pub propagation_messages: u64,
    pub consensus_ticks: u64,
    pub excluded: Vec<NodeId>,
    pub audit: Vec<AuditEvent>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub ledger: Ledger,
    pub ad: ParamVector,
    pub ac: McddModel,
    pub rounds: Vec<RoundRecord>,
    pub reputation: ReputationLedger,
    pub counters: NetCounters,
    /// CAV uploads to, and downloads from, their MEC.
    pub offchain_messages: u64,
    pub stop: StopReason,
}

/// Fraction of `xs` reconstructed within `alpha`.
pub fn ad_accuracy(params: &ParamVector, xs: &[&[f64]], alpha: f64) -> Result<f64, FedError> {
    if xs.is_empty() {
        return Err(FedError::EmptyReference);
    }
    let re = detector::reconstruction_errors(params, xs).map_err(|e| FedError::Config(e.to_string()))?;
    Ok(re.iter().filter(|r| **r <= alpha).count() as f64 / xs.len() as f64)
}

/// Closed-set accuracy of the classifier on dense labels.
pub fn ac_accuracy(model: &McddModel, xs: &[&[f64]], ys: &[usize]) -> Result<f64, ClassifierError> {
    if xs.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let mut hit = 0usize;
    for (x, y) in xs.iter().zip(ys) {
        if model.predict_dense(&model.distances(x)?) == *y {
            hit += 1;
        }
    }
    Ok(hit as f64 / xs.len() as f64)
}

/// Accuracy of the candidate minus accuracy of the previous global.
pub fn acc_gain(candidate_acc: f64, previous_acc: f64) -> f64 {
    candidate_acc - previous_acc
}

struct SimScorer<'a> {
    data: &'a SimData<'a>,
    ad_alpha: f64,
    ad_prev: f64,
    ac_prev: BTreeMap<NodeId, f64>,
    cache: RefCell<BTreeMap<(NodeId, Hash32), f64>>,
}

impl SimScorer<'_> {
    fn evaluate(&self, v: NodeId, tx: &Transaction) -> Option<f64> {
        match tx.kind {
            TxKind::Ad => {
                let m = ParamVector::from_bytes(&tx.payload).ok()?;
                Some(acc_gain(
                    ad_accuracy(&m, &self.data.b_test, self.ad_alpha).ok()?,
                    self.ad_prev,
                ))
            }
            TxKind::Ac => {
                let m = McddModel::from_bytes(&tx.payload).ok()?;
                let (xs, ys) = self.data.mec_attack.get(v.0 as usize)?;
                Some(acc_gain(ac_accuracy(&m, xs, ys).ok()?, *self.ac_prev.get(&v)?))
            }
        }
    }
}

impl Scorer for SimScorer<'_> {
    fn gain(&self, validator: NodeId, tx: &Transaction) -> f64 {
        let key = (validator, tx.id());
        if let Some(g) = self.cache.borrow().get(&key) {
            return *g;
        }
        // An undecodable update, or a validator without local data, scores
        // the worst possible accuracy.
        let g = self.evaluate(validator, tx).unwrap_or(-1.0);
        self.cache.borrow_mut().insert(key, g);
        g
    }
}

fn negate<M: FederatedModel>(m: &mut M) -> Result<(), FedError> {
    let v: Vec<f64> = m.flat().iter().map(|x| -x).collect();
    m.set_flat(&v)
}

/// Sample-weighted average of the block's transactions of one kind.
fn refresh<M: FederatedModel>(
    block: &Block,
    kind: TxKind,
    rule: AggregationRule,
    pool: &BTreeMap<Hash32, Transaction>,
    decode: impl Fn(&[u8]) -> Option<M>,
) -> Result<Option<M>, FedError> {
    let mut updates = Vec::new();
    for t in block.txs.iter().filter(|t| t.kind == kind) {
        if rule == AggregationRule::NonNegativeGain && t.acc_gain < 0.0 {
            continue;
        }
        if let Some(m) = pool.get(&t.id).and_then(|tx| decode(&tx.payload)) {
            updates.push((m, t.sample_count));
        }
    }
    if updates.is_empty() {
        return Ok(None);
    }
    fedavg(&updates).map(Some)
}

/// Runs rounds until the last block's mean gain is within tolerance of zero
/// (after `min_rounds`) or `max_rounds` is reached.
pub fn run_training(cfg: &SimConfig, data: &SimData<'_>, seed: u64) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let topo = &cfg.topology;
    if data.cav_benign.len() != topo.n_cav || data.mec_attack.len() != topo.n_mec {
        return Err(SimError::Config(format!(
            "data for {} CAVs and {} MECs, topology has {} and {}",
            data.cav_benign.len(),
            data.mec_attack.len(),
            topo.n_cav,
            topo.n_mec
        )));
    }
    let dim = data
        .b_test
        .first()
        .map(|x| x.len())
        .ok_or(SimError::Config("empty reference batch".into()))?;

    let mut ids = BTreeMap::new();
    let mut keyring = Keyring::new();
    let mecs: Vec<NodeId> = (0..topo.n_mec as u32).map(NodeId).collect();
    for &m in &mecs {
        let id = Identity::generate(m, NodeKind::MecActive, cfg.scheme, seed);
        keyring.register(&id).map_err(|e| SimError::Config(e.to_string()))?;
        ids.insert(m, id);
    }

    let ad_arch = match &cfg.ad_hidden {
        Some(h) => architecture_with_hidden(dim, h).map_err(|e| SimError::Config(e.to_string()))?,
        None => default_architecture(dim),
    };
    let mut ad = ParamVector::init(ad_arch, crate::derive_seed(seed, "ad-init", 0));

    let mut roles = RoleAssignment::bootstrap(&mecs, topo.n_validators())
        .map_err(|source| SimError::Halted { round: 0, source })?;
    let mut mcdd = cfg.mcdd.clone();
    mcdd.init_seed = crate::derive_seed(seed, "ac-init", 0);
    let (bx, by) = &data.mec_attack[roles.miner().0 as usize];
    let mut ac = McddModel::init(&mcdd, dim, data.classes.clone(), bx, by)?;

    let mut ledger = Ledger::with_genesis(Block::genesis(0, roles.validators.clone()));
    let window = if cfg.exclusion { cfg.exclusion_window } else { 0 };
    let mut reputation = ReputationLedger::new(window);
    let mut rounds = Vec::new();
    let mut counters = NetCounters::default();
    let mut offchain = 0u64;
    let mut stop = StopReason::MaxRounds;
    let b_test_task = ReconstructionTask {
        data: data.b_test.clone(),
    };

    for round in 1..=cfg.max_rounds {
        // Workers aggregate their CAVs and train the classifier locally.
        let mut txs = Vec::new();
        let mut accepted = 0;
        let mut rejected = 0;
        for &w in &roles.workers {
            let cavs: Vec<usize> = (w.0 as usize..topo.n_cav).step_by(topo.n_mec).collect();
            let tasks: Vec<ReconstructionTask> = cavs
                .iter()
                .map(|&c| ReconstructionTask {
                    data: data.cav_benign[c].clone(),
                })
                .collect();
            let clients: Vec<Client<'_, ReconstructionTask>> = cavs
                .iter()
                .zip(&tasks)
                .map(|(&c, t)| Client {
                    id: (topo.n_mec + c) as u32,
                    task: t,
                    arrival_tick: 0,
                })
                .collect();
            offchain += 2 * clients.len() as u64;
            let rc = RoundConfig {
                local: cfg.ad_local.clone(),
                validation: cfg.validation,
                tau: 0,
                seed: crate::derive_seed(seed, "cav", 0),
            };
            let (mut t_ad, tr) = federated::run_round(&ad, &clients, &b_test_task, &rc, round)?;
            let n_ad: u64 = tr.updates.iter().filter(|u| u.accepted).map(|u| u.sample_count).sum();
            let sent = tr.updates.iter().filter(|u| u.arrived && u.sample_count > 0).count();
            accepted += tr.updates.iter().filter(|u| u.accepted).count();
            rejected += sent - tr.updates.iter().filter(|u| u.accepted).count();

            let (xs, ys) = &data.mec_attack[w.0 as usize];
            let mut t_ac = None;
            if !xs.is_empty() {
                let mut local = LocalUpdateConfig::plain(cfg.ac_local.clone());
                local.train.seed = local_seed(crate::derive_seed(seed, "mec", 0), round, w.0 as u64);
                let task = McddTask {
                    xs: xs.clone(),
                    ys: ys.clone(),
                };
                t_ac = Some(federated::local_update(&ac, &task, &local)?);
            }

            let malicious = cfg.malicious.contains(&w.0);
            let me = &ids[&w];
            if n_ad > 0 {
                if malicious {
                    negate(&mut t_ad)?;
                }
                txs.push(Transaction::new(me, TxKind::Ad, round, n_ad, t_ad.to_bytes()));
            }
            if let Some(mut m) = t_ac {
                if malicious {
                    negate(&mut m)?;
                }
                txs.push(Transaction::new(me, TxKind::Ac, round, xs.len() as u64, m.to_bytes()));
            }
        }

        // Validators score against the current globals.
        let re = detector::reconstruction_errors(&ad, &data.b_test).map_err(|e| FedError::Config(e.to_string()))?;
        let ad_alpha =
            detector::threshold_from_errors(&re, cfg.mad_multiplier).map_err(|e| FedError::Config(e.to_string()))?;
        let mut ac_prev = BTreeMap::new();
        for &v in &roles.validators {
            let (xs, ys) = &data.mec_attack[v.0 as usize];
            if !xs.is_empty() {
                ac_prev.insert(v, ac_accuracy(&ac, xs, ys)?);
            }
        }
        let scorer = SimScorer {
            data,
            ad_alpha,
            ad_prev: ad_accuracy(&ad, &data.b_test, ad_alpha)?,
            ac_prev,
            cache: RefCell::new(BTreeMap::new()),
        };
        let faults: BTreeMap<NodeId, Fault> = cfg
            .faults
            .iter()
            .map(|nf| (NodeId(nf.node), nf.fault))
            .filter(|(n, _)| roles.validators.contains(n))
            .collect();
        let spec = RoundSpec {
            round,
            validators: &roles.validators,
            observers: &roles.workers,
            txs: &txs,
            faults: &faults,
            tip: ledger.tip(),
        };
        let out = run_consensus(
            &spec,
            &ids,
            &keyring,
            &scorer,
            &cfg.consensus,
            crate::derive_seed(seed, "net", round),
        );
        counters.merge(&out.counters);
        // Finalised blocks reach every attached CAV off-chain.
        if out.block.is_some() {
            offchain += topo.n_cav as u64;
        }

        let mut record = RoundRecord {
            round,
            validators: roles.validators.clone(),
            miner: roles.miner(),
            finalized: out.block.is_some(),
            attempts: out.attempts,
            txs_in_block: 0,
            mean_gain: 0.0,
            worker_gains: BTreeMap::new(),
            cav_updates_accepted: accepted,
            cav_updates_rejected: rejected,
            consensus_messages: out.counters.of(MsgClass::Consensus),
            transaction_messages: out.counters.of(MsgClass::Transaction),
            propagation_messages: out.counters.of(MsgClass::Propagation),
            consensus_ticks: out.ticks,
            excluded: Vec::new(),
            audit: out.audit,
        };

        let Some(block) = out.block else {
            record.excluded = reputation.excluded().into_iter().collect();
            rounds.push(record);
            continue;
        };
        ledger.append(block.clone(), &keyring)?;
        let pool: BTreeMap<Hash32, Transaction> = txs.into_iter().map(|t| (t.id(), t)).collect();
        if let Some(m) = refresh(&block, TxKind::Ad, cfg.aggregation, &pool, |b| {
            ParamVector::from_bytes(b).ok()
        })? {
            ad = m;
        }
        if let Some(m) = refresh(&block, TxKind::Ac, cfg.aggregation, &pool, |b| {
            McddModel::from_bytes(b).ok()
        })? {
            ac = m;
        }

        let mut worker_gains: BTreeMap<NodeId, f64> = BTreeMap::new();
        for t in &block.txs {
            *worker_gains.entry(t.author).or_insert(0.0) += t.acc_gain;
        }
        for (n, g) in &worker_gains {
            reputation.update(*n, round, *g);
        }
        record.txs_in_block = block.txs.len();
        record.mean_gain = block.mean_gain();
        record.worker_gains = worker_gains.clone();
        record.excluded = reputation.excluded().into_iter().collect();
        rounds.push(record);

        if round >= cfg.min_rounds && block.mean_gain().abs() < cfg.stop_tolerance {
            stop = StopReason::GainSettled;
            break;
        }
        roles = rotate_roles(
            &reputation,
            &worker_gains,
            &roles.validators,
            &mecs,
            topo.n_validators(),
        )
        .map_err(|source| SimError::Halted { round, source })?;
    }

    Ok(SimOutcome {
        ledger,
        ad,
        ac,
        rounds,
        reputation,
        counters,
        offchain_messages: offchain,
        stop,
    })
}
