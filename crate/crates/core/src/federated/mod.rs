//! Local updates with optional differential privacy, loss-gap validation
//! and sample-weighted averaging.
//!
//! Everything here is generic over [`FederatedModel`] so the detector's
//! [`ParamVector`] and the classifier's [`McddModel`] share one code path.

mod partition;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierError, McddModel};
use crate::nn::{self, NnError, ParamVector, ReconstructionMse, TrainConfig};

pub use partition::{partition, PartitionMode};

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("no updates to aggregate")]
    NoUpdates,
    #[error("update {0} has a different architecture")]
    LayoutMismatch(usize),
    #[error("client data is empty")]
    EmptyData,
    #[error("reference set is empty")]
    EmptyReference,
    #[error("sample count must be positive (update {0})")]
    ZeroWeight(usize),
    #[error("invalid federated configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

pub type Result<T> = std::result::Result<T, FedError>;

/// A model whose trainable state can be viewed as one flat vector.
pub trait FederatedModel: Clone {
    fn flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, v: &[f64]) -> Result<()>;
    fn same_layout(&self, other: &Self) -> bool;
}

impl FederatedModel for ParamVector {
    fn flat(&self) -> Vec<f64> {
        self.values.clone()
    }

    fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.values.len() {
            return Err(NnError::ParamCount {
                expected: self.values.len(),
                got: v.len(),
            }
            .into());
        }
        self.values.copy_from_slice(v);
        Ok(())
    }

    fn same_layout(&self, other: &Self) -> bool {
        ParamVector::same_layout(self, other)
    }
}

impl FederatedModel for McddModel {
    fn flat(&self) -> Vec<f64> {
        McddModel::flat(self)
    }

    fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        Ok(McddModel::set_flat(self, v)?)
    }

    fn same_layout(&self, other: &Self) -> bool {
        McddModel::same_layout(self, other)
    }
}

/// A client's local dataset together with its training objective.
pub trait Objective<M> {
    fn train(&self, init: &M, cfg: &TrainConfig) -> Result<M>;
    fn loss(&self, model: &M) -> Result<f64>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Autoencoder reconstruction on benign flows.
#[derive(Debug, Clone)]
pub struct ReconstructionTask<'a> {
    pub data: Vec<&'a [f64]>,
}

impl Objective<ParamVector> for ReconstructionTask<'_> {
    fn train(&self, init: &ParamVector, cfg: &TrainConfig) -> Result<ParamVector> {
        Ok(nn::train(init, &self.data, cfg, &ReconstructionMse)?.params)
    }

    fn loss(&self, model: &ParamVector) -> Result<f64> {
        Ok(nn::mean_reconstruction_loss(model, &self.data)?)
    }

    fn len(&self) -> usize {
        self.data.len()
    }
}

/// MCDD objective on attack flows with dense class labels.
#[derive(Debug, Clone)]
pub struct McddTask<'a> {
    pub xs: Vec<&'a [f64]>,
    pub ys: Vec<usize>,
}

impl Objective<McddModel> for McddTask<'_> {
    fn train(&self, init: &McddModel, cfg: &TrainConfig) -> Result<McddModel> {
        Ok(classifier::train_mcdd(init, &self.xs, &self.ys, cfg)?.0)
    }

    fn loss(&self, model: &McddModel) -> Result<f64> {
        Ok(model.loss(&self.xs, &self.ys)?)
    }

    fn len(&self) -> usize {
        self.xs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdateConfig {
    pub train: TrainConfig,
    /// Bound on the L2 norm of the returned weights; `None` is unbounded.
    #[serde(default)]
    pub clip_bound: Option<f64>,
    #[serde(default)]
    pub dp_enabled: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta_dp")]
    pub delta_dp: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_delta_dp() -> f64 {
    1e-5
}

impl LocalUpdateConfig {
    pub fn plain(train: TrainConfig) -> Self {
        Self {
            train,
            clip_bound: None,
            dp_enabled: false,
            epsilon: default_epsilon(),
            delta_dp: default_delta_dp(),
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if matches!(self.clip_bound, Some(c) if !(c > 0.0)) {
            return Err(FedError::Config("clip_bound must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(FedError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta_dp > 0.0 && self.delta_dp < 1.0) {
            return Err(FedError::Config(format!(
                "delta_dp must lie in (0, 1), got {}",
                self.delta_dp
            )));
        }
        if self.dp_enabled && !matches!(self.clip_bound, Some(c) if c.is_finite()) {
            return Err(FedError::Config(
                "differential privacy needs a finite clip_bound".into(),
            ));
        }
        Ok(())
    }
}

/// `w / max(1, |w| / c)`.
pub fn clip_update(w: &[f64], c: f64) -> Vec<f64> {
    let factor = (nn::l2_norm(w) / c).max(1.0);
    if factor == 1.0 {
        w.to_vec()
    } else {
        w.iter().map(|v| v / factor).collect()
    }
}

/// Gaussian-mechanism scale `c * sqrt(2 ln(1.25 / delta)) / epsilon`.
pub fn gaussian_sigma(epsilon: f64, delta_dp: f64, c: f64) -> f64 {
    c * (2.0 * (1.25 / delta_dp).ln()).sqrt() / epsilon
}

/// The seeded i.i.d. `N(0, sigma^2)` vector that [`add_dp_noise`] adds.
pub fn noise_vector(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

pub fn add_dp_noise(w: &[f64], epsilon: f64, delta_dp: f64, c: f64, seed: u64) -> Vec<f64> {
    let noise = noise_vector(w.len(), gaussian_sigma(epsilon, delta_dp, c), seed);
    w.iter().zip(noise).map(|(a, n)| a + n).collect()
}

/// `E` epochs of SGD from `global`, then clipping and, if enabled, noise.
/// `global` is not modified.
pub fn local_update<M: FederatedModel, O: Objective<M> + ?Sized>(
    global: &M,
    task: &O,
    cfg: &LocalUpdateConfig,
) -> Result<M> {
    cfg.validate()?;
    if task.is_empty() {
        return Err(FedError::EmptyData);
    }
    let mut model = task.train(global, &cfg.train)?;
    let mut w = model.flat();
    if let Some(c) = cfg.clip_bound {
        w = clip_update(&w, c);
    }
    if cfg.dp_enabled {
        let c = cfg.clip_bound.expect("validated");
        w = add_dp_noise(&w, cfg.epsilon, cfg.delta_dp, c, cfg.noise_seed);
    }
    model.set_flat(&w)?;
    Ok(model)
}

/// Loss-gap acceptance rule. `max_gap = None` accepts everything.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    pub max_gap: Option<f64>,
}

impl ValidationPolicy {
    pub const DISABLED: ValidationPolicy = ValidationPolicy { max_gap: None };

    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(FedError::Config(format!("loss gap must be positive, got {delta}")));
        }
        Ok(Self { max_gap: Some(delta) })
    }
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self { max_gap: Some(0.5) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub accepted: bool,
    pub gap: f64,
}

/// Accepts iff `|loss(candidate) - loss(previous)| <= delta` on `reference`.
pub fn validate_update<M, O: Objective<M> + ?Sized>(
    candidate: &M,
    previous: &M,
    policy: &ValidationPolicy,
    reference: &O,
) -> Result<Validation> {
    if reference.is_empty() {
        return Err(FedError::EmptyReference);
    }
    let gap = (reference.loss(candidate)? - reference.loss(previous)?).abs();
    let accepted = match policy.max_gap {
        None => true,
        Some(d) => gap <= d,
    };
    Ok(Validation { accepted, gap })
}

/// `sum_k (N_k / N) w_k`, accumulated in the given order.
pub fn fedavg<M: FederatedModel>(updates: &[(M, u64)]) -> Result<M> {
    let (first, _) = updates.first().ok_or(FedError::NoUpdates)?;
    let total: u64 = updates.iter().map(|(_, n)| *n).sum();
    let mut acc = vec![0.0; first.flat().len()];
    for (i, (m, n)) in updates.iter().enumerate() {
        if !m.same_layout(first) {
            return Err(FedError::LayoutMismatch(i));
        }
        if *n == 0 {
            return Err(FedError::ZeroWeight(i));
        }
        let w = *n as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(m.flat()) {
            *a += w * v;
        }
    }
    let mut out = first.clone();
    out.set_flat(&acc)?;
    Ok(out)
}

/// Seed for a client's local training in a given round.
pub fn local_seed(base: u64, round: u64, client: u64) -> u64 {
    crate::derive_seed(base, "local-train", (round << 32) | client)
}

/// Seed for a client's DP noise in a given round.
pub fn noise_seed(base: u64, round: u64, client: u64) -> u64 {
    crate::derive_seed(base, "dp-noise", (round << 32) | client)
}

/// One client's view of a round.
pub struct Client<'a, O: ?Sized> {
    pub id: u32,
    pub task: &'a O,
    /// Simulated tick at which the update reaches the aggregator.
    pub arrival_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub client: u32,
    pub sample_count: u64,
    pub arrived: bool,
    pub accepted: bool,
    pub loss_gap: Option<f64>,
    /// Share in the aggregate; zero for dropped or rejected updates.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: u64,
    pub updates: Vec<UpdateRecord>,
    /// Set when no update was accepted and the global model was kept.
    pub kept_previous: bool,
}

impl RoundTranscript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serialises")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub local: LocalUpdateConfig,
    pub validation: ValidationPolicy,
    /// Updates arriving after this many ticks are dropped.
    pub tau: u64,
    pub seed: u64,
}

/// One aggregation round: local updates, the `tau` cut-off, validation
/// against `reference` and FedAvg over accepted updates in client id order.
pub fn run_round<M, O>(
    global: &M,
    clients: &[Client<'_, O>],
    reference: &O,
    cfg: &RoundConfig,
    round: u64,
) -> Result<(M, RoundTranscript)>
where
    M: FederatedModel,
    O: Objective<M> + ?Sized,
{
    let mut order: Vec<&Client<'_, O>> = clients.iter().collect();
    order.sort_by_key(|c| c.id);
    let mut records = Vec::with_capacity(order.len());
    let mut accepted: Vec<(M, u64)> = Vec::new();
    for c in order {
        let n = c.task.len() as u64;
        let arrived = c.arrival_tick <= cfg.tau;
        let mut rec = UpdateRecord {
            client: c.id,
            sample_count: n,
            arrived,
            accepted: false,
            loss_gap: None,
            weight: 0.0,
        };
        if arrived && n > 0 {
            let mut local = cfg.local.clone();
            local.train.seed = local_seed(cfg.seed, round, c.id as u64);
            local.noise_seed = noise_seed(cfg.seed, round, c.id as u64);
            let update = local_update(global, c.task, &local)?;
            let v = validate_update(&update, global, &cfg.validation, reference)?;
            rec.loss_gap = Some(v.gap);
            rec.accepted = v.accepted;
            if v.accepted {
                accepted.push((update, n));
            }
        }
        records.push(rec);
    }
    let total: u64 = accepted.iter().map(|(_, n)| n).sum();
    for r in records.iter_mut().filter(|r| r.accepted) {
        r.weight = r.sample_count as f64 / total as f64;
    }
    let kept_previous = accepted.is_empty();
    let next = if kept_previous {
        global.clone()
    } else {
        fedavg(&accepted)?
    };
    Ok((
        next,
        RoundTranscript {
            round,
            updates: records,
            kept_previous,
        },
    ))
}
