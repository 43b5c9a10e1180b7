//! Seeded synthetic traffic: Gaussian flow-feature classes and a
//! packet-level generator with optional on/off bursts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::flows::{Direction, FlowKey, PacketRecord, FLAG_ACK, FLAG_PSH, FLAG_SYN};
use super::{DataError, FlowFeatureVector, Label, Result};

/// One isotropic Gaussian class `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: Label,
    /// Length `dim`, or a single value broadcast to every coordinate.
    pub mean: Vec<f64>,
    pub variance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub classes: Vec<ClassSpec>,
    #[serde(default = "default_tag")]
    pub tag: String,
}

fn default_tag() -> String {
    "synthetic".into()
}

fn label_code(l: Label) -> String {
    match l {
        Label::Benign => "b".into(),
        Label::Attack(id) => format!("a{id}"),
        Label::Unlabeled => "u".into(),
    }
}

/// Draws every class in order; identical for identical `(cfg, seed)`.
pub fn synth_traffic(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<FlowFeatureVector>> {
    if cfg.dim == 0 {
        return Err(DataError::Generator("dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.classes.iter().map(|c| c.count).sum());
    for (ci, class) in cfg.classes.iter().enumerate() {
        if !(class.variance > 0.0 && class.variance.is_finite()) {
            return Err(DataError::Generator(format!(
                "class {ci} has non-positive variance {}",
                class.variance
            )));
        }
        let mean: Vec<f64> = match class.mean.len() {
            1 => vec![class.mean[0]; cfg.dim],
            n if n == cfg.dim => class.mean.clone(),
            n => {
                return Err(DataError::Generator(format!(
                    "class {ci} mean has length {n}, dim is {}",
                    cfg.dim
                )))
            }
        };
        let normal = Normal::new(0.0, class.variance.sqrt()).expect("positive std");
        for i in 0..class.count {
            let features = mean.iter().map(|m| m + normal.sample(&mut rng)).collect();
            out.push(FlowFeatureVector {
                key: FlowKey::new(format!("{}-{i}", label_code(class.label)), "synth", 0, 0, 0),
                window_id: 0,
                features,
                label: class.label,
                dataset_tag: cfg.tag.clone(),
            });
        }
    }
    Ok(out)
}

/// Packet-level behaviour of one traffic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketClassSpec {
    pub label: Label,
    pub n_flows: usize,
    /// Flow lifetime in seconds.
    pub duration: f64,
    /// Packets per second outside bursts.
    pub rate: f64,
    /// `(on_seconds, off_seconds, rate_during_on)`; absent means steady.
    #[serde(default)]
    pub burst: Option<(f64, f64, f64)>,
    pub len_mean: f64,
    pub len_std: f64,
    /// Probability a packet carries SYN.
    pub syn_prob: f64,
    /// Probability a packet is forward.
    pub fwd_prob: f64,
    pub protocol: u8,
    pub dst_port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketGeneratorConfig {
    pub classes: Vec<PacketClassSpec>,
    /// Flow start times are uniform in `[0, start_spread)`.
    pub start_spread: f64,
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DataError::Generator(format!("{what} must be positive, got {v}")))
    }
}

/// Generates labelled packets, sorted by timestamp.
pub fn synth_packets(cfg: &PacketGeneratorConfig, seed: u64) -> Result<Vec<PacketRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (ci, c) in cfg.classes.iter().enumerate() {
        check_positive("duration", c.duration)?;
        check_positive("rate", c.rate)?;
        check_positive("len_std", c.len_std)?;
        if let Some((on, off, r)) = c.burst {
            check_positive("burst on", on)?;
            check_positive("burst off", off)?;
            check_positive("burst rate", r)?;
        }
        let len_dist = Normal::new(c.len_mean, c.len_std).expect("positive std");
        for f in 0..c.n_flows {
            let key = FlowKey::new(
                format!("10.{}.{}.{}", ci, f / 250, f % 250 + 1),
                "10.255.0.1",
                1024 + (f % 60000) as u16,
                c.dst_port,
                c.protocol,
            );
            let start = if cfg.start_spread > 0.0 {
                rng.random_range(0.0..cfg.start_spread)
            } else {
                0.0
            };
            // bursty flows start at a random phase of their on/off cycle
            let phase = match c.burst {
                Some((on, off, _)) => rng.random_range(0.0..on + off),
                None => 0.0,
            };
            let mut t = 0.0;
            loop {
                let rate = match c.burst {
                    Some((on, off, r)) if (t + phase) % (on + off) < on => r,
                    _ => c.rate,
                };
                let pkt_len = len_dist.sample(&mut rng).round().max(40.0) as u32;
                let dir = if rng.random_bool(c.fwd_prob.clamp(0.0, 1.0)) {
                    Direction::Forward
                } else {
                    Direction::Backward
                };
                let mut flags = FLAG_ACK;
                if rng.random_bool(c.syn_prob.clamp(0.0, 1.0)) {
                    flags = FLAG_SYN;
                } else if rng.random_bool(0.3) {
                    flags |= FLAG_PSH;
                }
                out.push(PacketRecord {
                    key: key.clone(),
                    ts: start + t,
                    len: pkt_len,
                    dir,
                    flags,
                    label: c.label,
                });
                t += Exp::new(rate).expect("positive rate").sample(&mut rng);
                if t > c.duration {
                    break;
                }
            }
        }
    }
    out.sort_by(|a, b| a.ts.total_cmp(&b.ts).then_with(|| a.key.cmp(&b.key)));
    Ok(out)
}
