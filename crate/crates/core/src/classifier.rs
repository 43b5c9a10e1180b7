//! Deep-MCDD open-set attack classifier.
//!
//! A backbone `f(x; W)` maps flows into a latent space of dimension `d`
//! where every known class `k` is a spherical Gaussian with mean `mu_k` and
//! scale `sigma_k`:
//!
//! ```text
//! D_k(x) = |f(x) - mu_k|^2 / (2 sigma_k^2) + d ln sigma_k
//! ```
//!
//! Known flows are assigned `argmax_k (-D_k + b_k)`. The confidence of a flow
//! is `-min_k D_k`; anything below the smallest training confidence `C_S` is
//! rejected as a 0-day.

use std::io::Write;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};
use crate::data::{FlowFeatureVector, Label};
use crate::nn::{self, Activation, Architecture, BatchPlan, NnError, ParamVector, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training flow {index} is labelled {label:?}, classifier trains on attack flows only")]
    NotAttack { index: usize, label: Label },
    #[error("label {label} out of range for {classes} known classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {0} does not appear in the class dictionary")]
    UnknownClass(u32),
    #[error("no training flows")]
    Empty,
    #[error("confidence threshold not computed; finish training first")]
    ThresholdUnset,
    #[error("invalid classifier configuration: {0}")]
    Config(String),
    #[error("non-finite loss or gradient at batch {batch}")]
    NonFinite { batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McddConfig {
    /// Hidden widths of the backbone; `relu` on each.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub nu: f64,
    /// Lower bound added to every `sigma_k`.
    pub sigma_floor: f64,
    /// `None` takes the strict minimum training confidence as `C_S`.
    #[serde(default)]
    pub threshold_percentile: Option<f64>,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for McddConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16],
            latent_dim: 8,
            nu: 1.0,
            sigma_floor: 0.1,
            threshold_percentile: None,
            train: TrainConfig {
                epochs: 60,
                batch_size: 32,
                learning_rate: 0.01,
                seed: 0,
                grad_clip: Some(5.0),
            },
            init_seed: 0,
        }
    }
}

impl McddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(ClassifierError::Config("latent_dim must be positive".into()));
        }
        if !(self.nu > 0.0) {
            return Err(ClassifierError::Config(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.sigma_floor >= 0.0) {
            return Err(ClassifierError::Config("sigma_floor must be non-negative".into()));
        }
        if matches!(self.threshold_percentile, Some(p) if !(0.0..100.0).contains(&p)) {
            return Err(ClassifierError::Config(
                "threshold_percentile must be in [0, 100)".into(),
            ));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn backbone(&self, input_dim: usize) -> Result<Architecture> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.latent_dim);
        let mut acts = vec![Activation::Relu; self.hidden.len()];
        acts.push(Activation::Identity);
        Ok(Architecture::new(sizes, acts)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McddModel {
    pub backbone: ParamVector,
    /// `K x d`, row-major.
    pub means: Vec<f64>,
    /// `sigma_k = softplus(rho_k) + sigma_floor`.
    pub rho: Vec<f64>,
    pub biases: Vec<f64>,
    pub nu: f64,
    pub sigma_floor: f64,
    pub conf_threshold: Option<f64>,
    /// Attack id of each dense class index, ascending.
    pub classes: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Known(u32),
    ZeroDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub flow: usize,
    pub distances: Vec<f64>,
    pub confidence: f64,
    pub outcome: Outcome,
}

impl McddModel {
    /// Head at `sigma = 1`, `b = 0`, with the given means.
    pub fn new(
        backbone: ParamVector,
        means: Vec<Vec<f64>>,
        classes: Vec<u32>,
        nu: f64,
        sigma_floor: f64,
    ) -> Result<Self> {
        let d = backbone.arch.output_dim();
        if means.len() != classes.len() || means.is_empty() {
            return Err(ClassifierError::Config(format!(
                "{} means for {} classes",
                means.len(),
                classes.len()
            )));
        }
        if let Some(m) = means.iter().find(|m| m.len() != d) {
            return Err(NnError::Dimension {
                expected: d,
                got: m.len(),
            }
            .into());
        }
        if !(sigma_floor < 1.0) {
            return Err(ClassifierError::Config("sigma_floor must be below 1".into()));
        }
        let k = classes.len();
        Ok(Self {
            backbone,
            means: means.concat(),
            rho: vec![softplus_inv(1.0 - sigma_floor); k],
            biases: vec![0.0; k],
            nu,
            sigma_floor,
            conf_threshold: None,
            classes,
        })
    }

    /// Backbone from `seed`, means at the latent class centroids of `xs`.
    pub fn init(cfg: &McddConfig, input_dim: usize, classes: Vec<u32>, xs: &[&[f64]], ys: &[usize]) -> Result<Self> {
        cfg.validate()?;
        let backbone = ParamVector::init(cfg.backbone(input_dim)?, cfg.init_seed);
        let mut model = Self::new(
            backbone,
            vec![vec![0.0; cfg.latent_dim]; classes.len()],
            classes,
            cfg.nu,
            cfg.sigma_floor,
        )?;
        model.reset_means(xs, ys)?;
        model.reset_sigma(xs, ys)?;
        Ok(model)
    }

    /// Sets every `sigma_k` to the pooled within-class latent spread of
    /// `xs`, so that the initial decision rule is nearest-mean.
    pub fn reset_sigma(&mut self, xs: &[&[f64]], ys: &[usize]) -> Result<()> {
        if xs.is_empty() {
            return Ok(());
        }
        let d = self.latent_dim();
        let net = self.backbone.view();
        let mut r2 = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            check_label(y, self.n_classes())?;
            let z = net.predict(x)?;
            r2 += z.iter().zip(self.mean(y)).map(|(a, m)| (a - m) * (a - m)).sum::<f64>();
        }
        let spread = (r2 / (xs.len() * d) as f64).sqrt();
        let excess = (spread - self.sigma_floor).max(1e-3);
        self.rho.iter_mut().for_each(|r| *r = softplus_inv(excess));
        Ok(())
    }

    /// Sets each `mu_k` to the latent mean of class `k` in `xs`; classes
    /// absent from `xs` keep their mean.
    pub fn reset_means(&mut self, xs: &[&[f64]], ys: &[usize]) -> Result<()> {
        let d = self.latent_dim();
        let k = self.n_classes();
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        let net = self.backbone.view();
        for (x, &y) in xs.iter().zip(ys) {
            check_label(y, k)?;
            let z = net.predict(x)?;
            for (s, v) in sums[y * d..(y + 1) * d].iter_mut().zip(&z) {
                *s += v;
            }
            counts[y] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    self.means[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.backbone.arch.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.arch.input_dim()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        softplus(self.rho[k]) + self.sigma_floor
    }

    pub fn set_sigma(&mut self, k: usize, sigma: f64) {
        self.rho[k] = softplus_inv(sigma - self.sigma_floor);
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        let d = self.latent_dim();
        &self.means[k * d..(k + 1) * d]
    }

    pub fn dense_index(&self, class: u32) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.backbone.values.len() + self.means.len() + self.rho.len() + self.biases.len()
    }

    /// Backbone, means, rho, biases concatenated.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(&self.backbone.values);
        v.extend(&self.means);
        v.extend(&self.rho);
        v.extend(&self.biases);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: v.len(),
            }
            .into());
        }
        let (bb, rest) = v.split_at(self.backbone.values.len());
        let (mu, rest) = rest.split_at(self.means.len());
        let (rho, b) = rest.split_at(self.rho.len());
        self.backbone.values.copy_from_slice(bb);
        self.means.copy_from_slice(mu);
        self.rho.copy_from_slice(rho);
        self.biases.copy_from_slice(b);
        Ok(())
    }

    pub fn same_layout(&self, other: &McddModel) -> bool {
        self.backbone.same_layout(&other.backbone) && self.classes == other.classes
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backbone.view().predict(x)?)
    }

    fn distances_latent(&self, z: &[f64]) -> Vec<f64> {
        let d = self.latent_dim() as f64;
        (0..self.n_classes())
            .map(|k| {
                let s = self.sigma(k);
                let r2: f64 = z.iter().zip(self.mean(k)).map(|(a, m)| (a - m) * (a - m)).sum();
                r2 / (2.0 * s * s) + d * s.ln()
            })
            .collect()
    }

    /// `D_k(x)` for every known class.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.distances_latent(&self.embed(x)?))
    }

    pub fn distance(&self, x: &[f64], k: usize) -> Result<f64> {
        check_label(k, self.n_classes())?;
        Ok(self.distances(x)?[k])
    }

    /// Dense index of `argmax_k (-D_k + b_k)`, lowest index on ties.
    pub fn predict_dense(&self, dist: &[f64]) -> usize {
        let mut best = 0;
        for k in 1..dist.len() {
            if -dist[k] + self.biases[k] > -dist[best] + self.biases[best] {
                best = k;
            }
        }
        best
    }

    pub fn classify(&self, flows: &[&[f64]]) -> Result<Vec<ClassificationResult>> {
        let cs = self.conf_threshold.ok_or(ClassifierError::ThresholdUnset)?;
        flows
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let distances = self.distances(x)?;
                let conf = confidence(&distances);
                let outcome = if conf < cs {
                    Outcome::ZeroDay
                } else {
                    Outcome::Known(self.classes[self.predict_dense(&distances)])
                };
                Ok(ClassificationResult {
                    flow: i,
                    distances,
                    confidence: conf,
                    outcome,
                })
            })
            .collect()
    }

    /// Mean objective over `(xs, ys)`.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            check_label(y, self.n_classes())?;
            total += sample_loss(&self.distances(x)?, &self.biases, y, self.nu);
        }
        Ok(if xs.is_empty() { 0.0 } else { total / xs.len() as f64 })
    }

    /// Batch-mean loss and gradient in the [`McddModel::flat`] layout.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[usize]) -> Result<(f64, Vec<f64>)> {
        if xs.is_empty() {
            return Err(NnError::EmptyBatch.into());
        }
        let k_n = self.n_classes();
        let d = self.latent_dim();
        let nb = self.backbone.values.len();
        let (off_mu, off_rho, off_b) = (nb, nb + k_n * d, nb + k_n * d + k_n);
        let mut grad = vec![0.0; self.param_count()];
        let scale = 1.0 / xs.len() as f64;
        let inv_nu = 1.0 / self.nu;
        let sig: Vec<f64> = (0..k_n).map(|k| self.sigma(k)).collect();
        let net = self.backbone.view();
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            check_label(y, k_n)?;
            let acts = net.forward(x)?;
            let z = acts.last().unwrap();
            let dist = self.distances_latent(z);
            total += sample_loss(&dist, &self.biases, y, self.nu);
            let p = posterior(&dist, &self.biases);
            let mut dz = vec![0.0; d];
            for k in 0..k_n {
                let ind = if k == y { 1.0 } else { 0.0 };
                let g = ind * (1.0 + inv_nu) - p[k] * inv_nu;
                grad[off_b + k] += scale * (-inv_nu * (ind - p[k]));
                if g == 0.0 {
                    continue;
                }
                let s2 = sig[k] * sig[k];
                let mu = self.mean(k);
                let mut r2 = 0.0;
                for j in 0..d {
                    let diff = z[j] - mu[j];
                    r2 += diff * diff;
                    dz[j] += g * diff / s2;
                    grad[off_mu + k * d + j] -= scale * g * diff / s2;
                }
                let dsigma = -r2 / (s2 * sig[k]) + d as f64 / sig[k];
                grad[off_rho + k] += scale * g * dsigma * nn::sigmoid(self.rho[k]);
            }
            net.backprop_into(&acts, &dz, scale, &mut grad[..nb]);
        }
        Ok((total * scale, grad))
    }

    /// Binary layout: magic, backbone, head vectors, scalars, classes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(BYTES_MAGIC);
        self.backbone.encode(&mut w);
        w.f64s(&self.means);
        w.f64s(&self.rho);
        w.f64s(&self.biases);
        w.f64(self.nu);
        w.f64(self.sigma_floor);
        match self.conf_threshold {
            Some(c) => {
                w.u8(1);
                w.f64(c);
            }
            None => w.u8(0),
        }
        w.u32(self.classes.len() as u32);
        for c in &self.classes {
            w.u32(*c);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let dec = |e: DecodeError| ClassifierError::Nn(e.into());
        r.expect(BYTES_MAGIC, "mcdd magic").map_err(dec)?;
        let backbone = ParamVector::decode(&mut r)?;
        let means = r.f64s("means").map_err(dec)?;
        let rho = r.f64s("rho").map_err(dec)?;
        let biases = r.f64s("biases").map_err(dec)?;
        let nu = r.f64("nu").map_err(dec)?;
        let sigma_floor = r.f64("sigma floor").map_err(dec)?;
        let conf_threshold = match r.u8("threshold flag").map_err(dec)? {
            0 => None,
            _ => Some(r.f64("threshold").map_err(dec)?),
        };
        let k = r.u32("class count").map_err(dec)? as usize;
        let classes = (0..k)
            .map(|_| r.u32("class id"))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(dec)?;
        r.done("trailing bytes").map_err(dec)?;
        let d = backbone.arch.output_dim();
        if means.len() != k * d || rho.len() != k || biases.len() != k {
            return Err(ClassifierError::Config("head sizes disagree with class count".into()));
        }
        Ok(Self {
            backbone,
            means,
            rho,
            biases,
            nu,
            sigma_floor,
            conf_threshold,
            classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            backbone: base64::engine::general_purpose::STANDARD.encode(self.backbone.to_bytes()),
            means: self.means.clone(),
            rho: self.rho.clone(),
            sigma: (0..self.n_classes()).map(|k| self.sigma(k)).collect(),
            biases: self.biases.clone(),
            nu: self.nu,
            sigma_floor: self.sigma_floor,
            conf_threshold: self.conf_threshold,
            classes: self.classes.clone(),
        };
        let json = serde_json::to_string_pretty(&file).expect("model file serialises");
        std::fs::write(path, json).map_err(|e| ClassifierError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let err = |message: String| ClassifierError::ModelFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let f: ModelFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if f.format != MODEL_FORMAT {
            return Err(err(format!("unsupported format {}", f.format)));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&f.backbone)
            .map_err(|e| err(e.to_string()))?;
        let backbone = ParamVector::from_bytes(&bytes)?;
        let (k, d) = (f.classes.len(), backbone.arch.output_dim());
        if f.means.len() != k * d || f.rho.len() != k || f.biases.len() != k {
            return Err(err("head sizes disagree with class count".into()));
        }
        Ok(Self {
            backbone,
            means: f.means,
            rho: f.rho,
            biases: f.biases,
            nu: f.nu,
            sigma_floor: f.sigma_floor,
            conf_threshold: f.conf_threshold,
            classes: f.classes,
        })
    }
}

const MODEL_FORMAT: &str = "osfl-mcdd/1";
const BYTES_MAGIC: &[u8; 4] = b"MCDD";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    backbone: String,
    means: Vec<f64>,
    rho: Vec<f64>,
    /// Informational; `rho` is authoritative.
    sigma: Vec<f64>,
    biases: Vec<f64>,
    nu: f64,
    sigma_floor: f64,
    conf_threshold: Option<f64>,
    classes: Vec<u32>,
}

fn check_label(y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(ClassifierError::LabelOutOfRange { label: y, classes: k });
    }
    Ok(())
}

/// `softmax(-D + b)`, max-shifted.
fn posterior(dist: &[f64], b: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = dist.iter().zip(b).map(|(d, b)| -d + b).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sample_loss(dist: &[f64], b: &[f64], y: usize, nu: f64) -> f64 {
    let logits: Vec<f64> = dist.iter().zip(b).map(|(d, b)| -d + b).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    dist[y] - (logits[y] - lse) / nu
}

/// `-min_k D_k`.
pub fn confidence(dist: &[f64]) -> f64 {
    -dist.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `C_S` over training confidences: the minimum, or the given lower
/// percentile (nearest rank).
pub fn threshold_from_confidences(conf: &[f64], percentile: Option<f64>) -> Result<f64> {
    if conf.is_empty() {
        return Err(ClassifierError::Empty);
    }
    match percentile {
        None => Ok(conf.iter().cloned().fold(f64::INFINITY, f64::min)),
        Some(p) => {
            let mut v = conf.to_vec();
            v.sort_by(f64::total_cmp);
            let idx = ((p / 100.0) * (v.len() - 1) as f64).floor() as usize;
            Ok(v[idx])
        }
    }
}

/// Computes and stores `C_S` on the training flows.
pub fn confidence_and_threshold(model: &mut McddModel, train: &[&[f64]], percentile: Option<f64>) -> Result<f64> {
    let conf = train
        .iter()
        .map(|x| Ok(confidence(&model.distances(x)?)))
        .collect::<Result<Vec<_>>>()?;
    let cs = threshold_from_confidences(&conf, percentile)?;
    model.conf_threshold = Some(cs);
    Ok(cs)
}

/// Minibatch SGD on the objective from `init`; returns the model and the
/// mean batch loss per epoch. `C_S` is left untouched.
pub fn train_mcdd(init: &McddModel, xs: &[&[f64]], ys: &[usize], cfg: &TrainConfig) -> Result<(McddModel, Vec<f64>)> {
    cfg.validate()?;
    let mut model = init.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    if xs.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let mut flat = model.flat();
    let mut plan = BatchPlan::new(xs.len(), cfg.batch_size, cfg.seed);
    let mut bx: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut by: Vec<usize> = Vec::with_capacity(cfg.batch_size);
    let mut batch_index = 0;
    for _ in 0..cfg.epochs {
        let batches = plan.epoch();
        let mut epoch_loss = 0.0;
        for idx in &batches {
            bx.clear();
            by.clear();
            bx.extend(idx.iter().map(|&i| xs[i]));
            by.extend(idx.iter().map(|&i| ys[i]));
            let (l, mut g) = model.loss_and_grad(&bx, &by)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(ClassifierError::NonFinite { batch: batch_index });
            }
            if let Some(c) = cfg.grad_clip {
                nn::clip_in_place(&mut g, c);
            }
            flat = nn::sgd_values(&flat, &g, cfg.learning_rate);
            model.set_flat(&flat)?;
            epoch_loss += l;
            batch_index += 1;
        }
        model.backbone.version += batches.len() as u64;
        history.push(epoch_loss / batches.len() as f64);
    }
    Ok((model, history))
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub model: McddModel,
    pub history: Vec<f64>,
}

/// Sorted attack ids, features and dense labels of attack-only flows.
pub fn dense_dataset(flows: &[FlowFeatureVector]) -> Result<(Vec<u32>, Vec<&[f64]>, Vec<usize>)> {
    let mut classes = Vec::new();
    for (index, f) in flows.iter().enumerate() {
        match f.label {
            Label::Attack(id) => classes.push(id),
            label => return Err(ClassifierError::NotAttack { index, label }),
        }
    }
    classes.sort_unstable();
    classes.dedup();
    let xs = flows.iter().map(|f| f.features.as_slice()).collect();
    let ys = flows
        .iter()
        .map(|f| classes.binary_search(&f.label.attack_id().unwrap()).unwrap())
        .collect();
    Ok((classes, xs, ys))
}

/// Dense labels of `flows` under an existing class list.
pub fn dense_labels(flows: &[FlowFeatureVector], classes: &[u32]) -> Result<Vec<usize>> {
    flows
        .iter()
        .enumerate()
        .map(|(index, f)| match f.label {
            Label::Attack(id) => classes
                .binary_search(&id)
                .map_err(|_| ClassifierError::UnknownClass(id)),
            label => Err(ClassifierError::NotAttack { index, label }),
        })
        .collect()
}

/// Initialises, trains and thresholds a classifier on attack flows.
pub fn train_classifier(attack_train: &[FlowFeatureVector], cfg: &McddConfig) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    let (classes, xs, ys) = dense_dataset(attack_train)?;
    if xs.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let init = McddModel::init(cfg, xs[0].len(), classes, &xs, &ys)?;
    let (mut model, history) = train_mcdd(&init, &xs, &ys, &cfg.train)?;
    confidence_and_threshold(&mut model, &xs, cfg.threshold_percentile)?;
    Ok(ClassifierOutcome { model, history })
}

/// CSV with `flow,outcome,confidence` and one distance column per class.
pub fn write_results_csv<W: Write>(
    w: W,
    model: &McddModel,
    results: &[ClassificationResult],
    ids: &[String],
) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["flow".to_string(), "outcome".into(), "confidence".into()];
    header.extend(model.classes.iter().map(|c| format!("d_{c}")));
    wtr.write_record(&header)?;
    for r in results {
        let mut row = vec![
            ids.get(r.flow).cloned().unwrap_or_else(|| r.flow.to_string()),
            match r.outcome {
                Outcome::Known(c) => format!("known:{c}"),
                Outcome::ZeroDay => "zero-day".into(),
            },
            format!("{}", r.confidence),
        ];
        row.extend(r.distances.iter().map(|d| format!("{d}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()
}
