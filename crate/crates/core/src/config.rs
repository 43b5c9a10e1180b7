//! Versioned experiment configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::SimConfig;
use crate::classifier::McddConfig;
use crate::data::{
    ClassDictionary, ClassSpec, FlowSchema, GeneratorConfig, Label, NormMethod, PacketClassSpec, PacketGeneratorConfig,
    SplitFractions,
};
use crate::federated::PartitionMode;
use crate::nn::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported config version {0}, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where flows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Gaussian feature classes.
    Synthetic { generator: GeneratorConfig },
    /// Generated packets, aggregated at `time_window`.
    SyntheticPackets {
        generator: PacketGeneratorConfig,
        #[serde(default = "default_tw")]
        time_window: String,
    },
    /// Packet-summary CSV, aggregated at `time_window`.
    PacketCsv {
        path: PathBuf,
        dictionary: ClassDictionary,
        #[serde(default = "default_tw")]
        time_window: String,
    },
    /// Flow-feature CSV export; cannot be re-windowed.
    FlowCsv {
        path: PathBuf,
        schema: FlowSchema,
        dictionary: ClassDictionary,
        /// Seeded subsample size.
        #[serde(default)]
        subsample: Option<usize>,
    },
}

fn default_tw() -> String {
    "default".into()
}

/// Centralised detector training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSettings {
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    pub mad_multiplier: f64,
    pub train: TrainConfig,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            hidden: None,
            mad_multiplier: crate::detector::DEFAULT_MAD_MULTIPLIER,
            train: TrainConfig {
                epochs: 60,
                batch_size: 16,
                learning_rate: 0.05,
                seed: 0,
                grad_clip: Some(5.0),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub time_windows: Vec<String>,
    pub epsilons: Vec<f64>,
    pub dp_clip: f64,
    pub dp_delta: f64,
    pub dp_seeds: Vec<u64>,
    /// Rounds and clients of the chain-free FL driver used by the sweeps.
    pub fl_rounds: u64,
    pub fl_clients: usize,
    pub malicious_fracs: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            time_windows: vec!["1".into(), "10".into(), "default".into()],
            epsilons: vec![1.0, 0.1, 0.01],
            dp_clip: 20.0,
            dp_delta: 1e-5,
            dp_seeds: vec![0, 1, 2, 3, 4],
            fl_rounds: 3,
            fl_clients: 4,
            malicious_fracs: vec![0.3, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default = "default_partition")]
    pub partition: PartitionMode,
    #[serde(default = "default_norm")]
    pub norm: NormMethod,
    #[serde(default)]
    pub benign_split: SplitFractions,
    #[serde(default)]
    pub attack_split: SplitFractions,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub detector: DetectorSettings,
    #[serde(default)]
    pub classifier: McddConfig,
    #[serde(default)]
    pub sweeps: SweepSettings,
}

fn default_partition() -> PartitionMode {
    PartitionMode::Iid
}

fn default_norm() -> NormMethod {
    NormMethod::Minmax
}

/// Three attack classes placed along separate axes, plus benign at the origin.
pub fn default_generator() -> GeneratorConfig {
    let dim = 10;
    let axis = |i: usize, v: f64| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        m[i] = v;
        m[i + 1] = v;
        m
    };
    GeneratorConfig {
        dim,
        classes: vec![
            ClassSpec {
                label: Label::Benign,
                mean: vec![0.0],
                variance: 0.25,
                count: 600,
            },
            ClassSpec {
                label: Label::Attack(0),
                mean: axis(0, 4.0),
                variance: 0.25,
                count: 200,
            },
            ClassSpec {
                label: Label::Attack(1),
                mean: axis(3, 4.0),
                variance: 0.25,
                count: 200,
            },
            ClassSpec {
                label: Label::Attack(2),
                mean: axis(6, -4.0),
                variance: 0.25,
                count: 200,
            },
        ],
        tag: "synthetic".into(),
    }
}

/// Steady benign traffic against a bursty flood and a SYN scan.
pub fn default_packet_generator() -> PacketGeneratorConfig {
    let class = |label, rate, burst, len_mean, syn_prob, dst_port| PacketClassSpec {
        label,
        n_flows: 40,
        duration: 30.0,
        rate,
        burst,
        len_mean,
        len_std: 40.0,
        syn_prob,
        fwd_prob: 0.6,
        protocol: 6,
        dst_port,
    };
    PacketGeneratorConfig {
        classes: vec![
            class(Label::Benign, 2.0, None, 600.0, 0.02, 443),
            class(Label::Attack(0), 1.0, Some((2.0, 4.0, 40.0)), 200.0, 0.05, 80),
            class(Label::Attack(1), 6.0, None, 60.0, 0.9, 22),
        ],
        start_spread: 10.0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            data: DataSource::Synthetic {
                generator: default_generator(),
            },
            partition: default_partition(),
            norm: default_norm(),
            benign_split: SplitFractions::DEFAULT,
            attack_split: SplitFractions::DEFAULT,
            sim: SimConfig::default(),
            detector: DetectorSettings::default(),
            classifier: McddConfig::default(),
            sweeps: SweepSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed: Result<Self, String> = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let cfg = parsed.map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.benign_split.validate().map_err(|e| inv(&e))?;
        self.attack_split.validate().map_err(|e| inv(&e))?;
        self.sim.validate().map_err(|e| inv(&e))?;
        self.classifier.validate().map_err(|e| inv(&e))?;
        self.detector.train.validate().map_err(|e| inv(&e))?;
        if !(self.detector.mad_multiplier > 0.0) {
            return Err(ConfigError::Invalid("detector.mad_multiplier must be positive".into()));
        }
        if let PartitionMode::NonIid { alpha } = self.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "dirichlet alpha must be positive, got {alpha}"
                )));
            }
        }
        let s = &self.sweeps;
        if s.fl_clients == 0 || s.fl_rounds == 0 {
            return Err(ConfigError::Invalid("sweeps need at least one client and round".into()));
        }
        if s.epsilons.iter().any(|e| !(*e > 0.0)) || !(s.dp_clip > 0.0) || !(s.dp_delta > 0.0 && s.dp_delta < 1.0) {
            return Err(ConfigError::Invalid(
                "sweep epsilons, dp_clip and dp_delta out of range".into(),
            ));
        }
        if s.malicious_fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(ConfigError::Invalid("malicious fractions must lie in [0, 1]".into()));
        }
        for tw in &s.time_windows {
            crate::data::TimeWindow::parse(tw).map_err(|e| inv(&e))?;
        }
        Ok(())
    }

    /// Canonical JSON used for fingerprints.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// SHA-256 over the canonical config and the effective seed.
    pub fn fingerprint(&self) -> String {
        let mut bytes = self.canonical_json().into_bytes();
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        crate::sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&t).unwrap(), cfg);
        let j = dir.path().join("c.json");
        std::fs::write(&j, serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&j).unwrap(), cfg);
    }

    #[test]
    fn missing_file_names_path() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/osfl.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/osfl.toml"));
    }

    #[test]
    fn wrong_version_and_unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v["version"] = 9.into();
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(ConfigError::Version(9))));
        v["version"] = 1.into();
        v["bogus"] = 1.into();
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn fingerprint_tracks_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), ExperimentConfig::default().fingerprint());
    }
}
