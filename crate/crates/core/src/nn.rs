//! Dense feed-forward networks with manual backpropagation.
//!
//! Parameters live in one flat vector. For every weight layer `i` the layout
//! is the `out_i x in_i` weight matrix in row-major order followed by the
//! `out_i` biases, so the flat length is `sum(in_i * out_i + out_i)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("architecture needs at least two layers, got {0}")]
    TooFewLayers(usize),
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("expected {expected} activations, got {got}")]
    ActivationCount { expected: usize, got: usize },
    #[error("parameter vector has {got} values, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFiniteParam(usize),
    #[error("input has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite gradient in batch {batch}")]
    NonFiniteGradient { batch: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Sigmoid,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer widths plus one activation per weight layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(NnError::TooFewLayers(layer_sizes.len()));
        }
        if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(NnError::ZeroWidth(i));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(NnError::ActivationCount {
                expected: layer_sizes.len() - 1,
                got: activations.len(),
            });
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// Same activation on every layer.
    pub fn uniform(layer_sizes: Vec<usize>, act: Activation) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        Self::new(layer_sizes, vec![act; n])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_weight_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `i`'s weight block inside the flat vector.
    fn layer_offset(&self, i: usize) -> usize {
        self.layer_sizes[..=i].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn encode(&self, w: &mut Writer) {
        w.u32(self.layer_sizes.len() as u32);
        for &s in &self.layer_sizes {
            w.u32(s as u32);
        }
        for a in &self.activations {
            w.u8(a.code());
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u32("layer count")? as usize;
        if n > 4096 {
            return Err(DecodeError {
                offset: 0,
                what: "layer count",
            }
            .into());
        }
        let sizes = (0..n)
            .map(|_| r.u32("layer size").map(|v| v as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut acts = Vec::with_capacity(n.saturating_sub(1));
        for _ in 1..n {
            let c = r.u8("activation")?;
            acts.push(Activation::from_code(c).ok_or(DecodeError {
                offset: 0,
                what: "activation code",
            })?);
        }
        Self::new(sizes, acts)
    }
}

/// Borrowed view of a network: architecture plus flat parameters.
#[derive(Clone, Copy)]
pub struct Mlp<'a> {
    pub arch: &'a Architecture,
    pub values: &'a [f64],
}

impl<'a> Mlp<'a> {
    pub fn new(arch: &'a Architecture, values: &'a [f64]) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(NnError::ParamCount {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        Ok(Self { arch, values })
    }

    /// Activations of every layer, input included at index 0.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let sizes = self.arch.layer_sizes();
        if x.len() != sizes[0] {
            return Err(NnError::Dimension {
                expected: sizes[0],
                got: x.len(),
            });
        }
        let mut acts = Vec::with_capacity(sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        for (i, act) in self.arch.activations().iter().enumerate() {
            let (n_in, n_out) = (sizes[i], sizes[i + 1]);
            let w = &self.values[off..off + n_in * n_out];
            let b = &self.values[off + n_in * n_out..off + n_in * n_out + n_out];
            let prev = &acts[i];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>() + b[o];
                    act.apply(z)
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(acts)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.pop().unwrap())
    }

    /// Accumulates `scale * dL/dparams` into `grad` given the activations
    /// from [`Mlp::forward`] and `dL/doutput`.
    pub fn backprop_into(&self, acts: &[Vec<f64>], out_grad: &[f64], scale: f64, grad: &mut [f64]) {
        let sizes = self.arch.layer_sizes();
        let n_layers = self.arch.n_weight_layers();
        let mut delta: Vec<f64> = out_grad
            .iter()
            .zip(&acts[n_layers])
            .map(|(g, y)| g * self.arch.activations()[n_layers - 1].derivative_at_output(*y))
            .collect();
        for i in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[i], sizes[i + 1]);
            let off = self.arch.layer_offset(i);
            let prev = &acts[i];
            for o in 0..n_out {
                let d = delta[o] * scale;
                if d != 0.0 {
                    let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, p) in gw.iter_mut().zip(prev) {
                        *g += d * p;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            if i > 0 {
                let w = &self.values[off..off + n_in * n_out];
                let act = self.arch.activations()[i - 1];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (n, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *n += d * wv;
                        }
                    }
                }
                for (n, y) in next.iter_mut().zip(prev) {
                    *n *= act.derivative_at_output(*y);
                }
                delta = next;
            }
        }
    }
}

/// Flat model parameters with their architecture and a monotone version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub arch: Architecture,
    pub values: Vec<f64>,
    pub version: u64,
}

const PARAM_MAGIC: &[u8; 4] = b"PVEC";
const PARAM_FORMAT: u16 = 1;

impl ParamVector {
    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(NnError::ParamCount {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteParam(i));
        }
        Ok(Self {
            arch,
            values,
            version: 0,
        })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            values: vec![0.0; n],
            version: 0,
        }
    }

    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases included.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(arch.param_count());
        for w in arch.layer_sizes().windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        Self {
            arch,
            values,
            version: 0,
        }
    }

    pub fn view(&self) -> Mlp<'_> {
        Mlp {
            arch: &self.arch,
            values: &self.values,
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.arch == other.arch && self.values.len() == other.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Versioned binary layout: `PVEC`, u16 format, architecture descriptor,
    /// u64 version, then the values as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.bytes(PARAM_MAGIC);
        w.u16(PARAM_FORMAT);
        self.arch.encode(w);
        w.u64(self.version);
        w.f64s(&self.values);
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let p = Self::decode(&mut r)?;
        r.done("trailing bytes")?;
        Ok(p)
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        r.expect(PARAM_MAGIC, "param magic")?;
        if r.u16("param format")? != PARAM_FORMAT {
            return Err(DecodeError {
                offset: 4,
                what: "unsupported param format",
            }
            .into());
        }
        let arch = Architecture::decode(r)?;
        let version = r.u64("version")?;
        let values = r.f64s("values")?;
        let mut p = Self::from_values(arch, values)?;
        p.version = version;
        Ok(p)
    }

    /// Hex SHA-256 of the binary layout.
    pub fn digest(&self) -> String {
        crate::sha256_hex(&self.to_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("param vector serialises")
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forward pass returning every layer's activations.
pub fn forward(params: &ParamVector, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    params.view().forward(x)
}

/// Mean of squared componentwise differences.
pub fn mse_loss(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    if x.is_empty() {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// Per-sample loss on the network output.
pub trait Loss {
    /// Loss value and its gradient with respect to `output`.
    fn eval(&self, input: &[f64], output: &[f64]) -> (f64, Vec<f64>);
}

/// MSE between the output and the input itself (autoencoder objective).
#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructionMse;

impl Loss for ReconstructionMse {
    fn eval(&self, input: &[f64], output: &[f64]) -> (f64, Vec<f64>) {
        let n = input.len() as f64;
        let grad = output.iter().zip(input).map(|(o, x)| 2.0 * (o - x) / n).collect();
        (mse_loss(input, output), grad)
    }
}

/// Batch-mean loss and gradient, the gradient in the same flat layout as
/// `params`.
pub fn backward<L: Loss + ?Sized>(params: &ParamVector, batch: &[&[f64]], loss: &L) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let net = params.view();
    let mut grad = vec![0.0; params.values.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for x in batch {
        let acts = net.forward(x)?;
        let (l, g) = loss.eval(x, acts.last().unwrap());
        total += l;
        net.backprop_into(&acts, &g, scale, &mut grad);
    }
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient { batch: 0 });
    }
    Ok((
        total * scale,
        ParamVector {
            arch: params.arch.clone(),
            values: grad,
            version: params.version,
        },
    ))
}

/// `w - lr * g`, version incremented.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !params.same_layout(grad) {
        return Err(NnError::LayoutMismatch);
    }
    Ok(ParamVector {
        arch: params.arch.clone(),
        values: sgd_values(&params.values, &grad.values, lr),
        version: params.version + 1,
    })
}

pub(crate) fn sgd_values(w: &[f64], g: &[f64], lr: f64) -> Vec<f64> {
    w.iter().zip(g).map(|(w, g)| w - lr * g).collect()
}

/// Rescales `g` in place so its L2 norm is at most `bound`.
pub(crate) fn clip_in_place(g: &mut [f64], bound: f64) {
    let norm = l2_norm(g);
    let factor = (norm / bound).max(1.0);
    if factor > 1.0 {
        for v in g.iter_mut() {
            *v /= factor;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Per-step gradient norm bound; `None` disables gradient clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NnError::Config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config("learning_rate must be a non-negative real"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(NnError::Config("grad_clip must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.5,
            seed: 0,
            grad_clip: None,
        }
    }
}

/// Seeded minibatch order: one shuffle per epoch, last short batch kept.
pub(crate) struct BatchPlan {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            batch_size,
        }
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
}

/// Minibatch SGD over `data`.
pub fn train<L: Loss + ?Sized>(
    init: &ParamVector,
    data: &[&[f64]],
    cfg: &TrainConfig,
    loss: &L,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, history });
    }
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut plan = BatchPlan::new(data.len(), cfg.batch_size, cfg.seed);
    let mut batch_index = 0;
    let mut batch: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = plan.epoch();
        for idx in &batches {
            batch.clear();
            batch.extend(idx.iter().map(|&i| data[i]));
            let (l, mut g) = backward(&params, &batch, loss).map_err(|e| match e {
                NnError::NonFiniteGradient { .. } => NnError::NonFiniteGradient { batch: batch_index },
                e => e,
            })?;
            if let Some(c) = cfg.grad_clip {
                clip_in_place(&mut g.values, c);
            }
            params.values = sgd_values(&params.values, &g.values, cfg.learning_rate);
            params.version += 1;
            epoch_loss += l;
            batch_index += 1;
        }
        history.push(epoch_loss / batches.len() as f64);
    }
    Ok(TrainOutcome { params, history })
}

/// Mean reconstruction MSE of `params` over `data`.
pub fn mean_reconstruction_loss(params: &ParamVector, data: &[&[f64]]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let net = params.view();
    let mut total = 0.0;
    for x in data {
        total += mse_loss(x, &net.predict(x)?);
    }
    Ok(total / data.len() as f64)
}
