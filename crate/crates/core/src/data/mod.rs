//! Flow ingestion, feature aggregation, normalisation, synthetic traffic and
//! the 0-day holdout scenarios.

mod flow_csv;
mod flows;
mod normalize;
mod scenario;
mod synth;

pub use flow_csv::{load_flow_csv, read_flow_csv, write_flow_csv, FlowSchema, LoadReport, RowError};
pub use flows::{
    aggregate_flows, read_packet_csv, read_packet_csv_path, write_packet_csv, Direction, FlowFeatureVector, FlowKey,
    PacketRecord, TimeWindow, FEATURE_DIM, FEATURE_NAMES, FLAG_ACK, FLAG_FIN, FLAG_PSH, FLAG_RST, FLAG_SYN, FLAG_URG,
};
pub use normalize::{normalize, NormMethod, NormalizerState};
pub use scenario::{make_scenarios, Scenario, ScenarioSpec, SplitFractions, MIN_CLASS_SIZE};
pub use synth::{synth_packets, synth_traffic, ClassSpec, GeneratorConfig, PacketClassSpec, PacketGeneratorConfig};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unexpected packet CSV header: {0}")]
    BadHeader(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unmappable labels: {0:?}")]
    UnmappableLabels(Vec<String>),
    #[error("corrupt packet input: {0}")]
    Corrupt(String),
    #[error("invalid time window: {0}")]
    InvalidWindow(f64),
    #[error("class {class} has {count} samples, minimum is {min}")]
    ClassTooSmall { class: String, count: usize, min: usize },
    #[error("no benign flows present")]
    NoBenign,
    #[error("no attack classes present")]
    NoAttacks,
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("generator: {0}")]
    Generator(String),
    #[error("empty input")]
    Empty,
    #[error("feature vector has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Ground-truth label carried by a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Attack(u32),
    Unlabeled,
}

impl Label {
    pub fn is_benign(self) -> bool {
        self == Label::Benign
    }

    pub fn attack_id(self) -> Option<u32> {
        match self {
            Label::Attack(id) => Some(id),
            _ => None,
        }
    }
}

/// Maps raw label strings to [`Label`]s. Attack ids are positions in
/// `attacks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDictionary {
    pub benign: Vec<String>,
    pub attacks: Vec<String>,
}

impl ClassDictionary {
    pub fn new(benign: &[&str], attacks: &[&str]) -> Self {
        Self {
            benign: benign.iter().map(|s| s.to_string()).collect(),
            attacks: attacks.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn lookup(&self, raw: &str) -> Option<Label> {
        let raw = raw.trim();
        if self.benign.iter().any(|b| b.eq_ignore_ascii_case(raw)) {
            return Some(Label::Benign);
        }
        self.attacks
            .iter()
            .position(|a| a.eq_ignore_ascii_case(raw))
            .map(|i| Label::Attack(i as u32))
    }

    pub fn name(&self, label: Label) -> String {
        match label {
            Label::Benign => self.benign.first().cloned().unwrap_or_else(|| "Benign".into()),
            Label::Attack(id) => self
                .attacks
                .get(id as usize)
                .cloned()
                .unwrap_or_else(|| format!("attack{id}")),
            Label::Unlabeled => "Unlabeled".into(),
        }
    }
}

/// Per-label counts.
pub fn class_histogram(flows: &[FlowFeatureVector]) -> BTreeMap<Label, usize> {
    let mut h = BTreeMap::new();
    for f in flows {
        *h.entry(f.label).or_insert(0) += 1;
    }
    h
}
