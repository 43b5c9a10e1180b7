use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassDictionary, DataError, Label, Result};

/// Flow identity: the five header fields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    /// Builds a key, zeroing ports for protocols without them.
    pub fn new(src: impl Into<String>, dst: impl Into<String>, sport: u16, dport: u16, proto: u8) -> Self {
        let (sport, dport) = if has_ports(proto) { (sport, dport) } else { (0, 0) };
        Self {
            src_addr: src.into(),
            dst_addr: dst.into(),
            src_port: sport,
            dst_port: dport,
            protocol: proto,
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}/{}",
            self.src_addr, self.src_port, self.dst_addr, self.dst_port, self.protocol
        )
    }
}

// TCP, UDP, SCTP, DCCP carry ports.
fn has_ports(proto: u8) -> bool {
    matches!(proto, 6 | 17 | 33 | 132)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

pub const FLAG_FIN: u16 = 0x01;
pub const FLAG_SYN: u16 = 0x02;
pub const FLAG_RST: u16 = 0x04;
pub const FLAG_PSH: u16 = 0x08;
pub const FLAG_ACK: u16 = 0x10;
pub const FLAG_URG: u16 = 0x20;

/// One line of a packet-summary capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub key: FlowKey,
    pub ts: f64,
    pub len: u32,
    pub dir: Direction,
    pub flags: u16,
    pub label: Label,
}

/// Aggregation window; `Default` spans the whole flow lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeWindow {
    Default,
    Seconds(f64),
}

impl TimeWindow {
    pub fn seconds(s: f64) -> Result<Self> {
        if s > 0.0 && s.is_finite() {
            Ok(TimeWindow::Seconds(s))
        } else {
            Err(DataError::InvalidWindow(s))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeWindow::Seconds(s) if !(s > 0.0 && s.is_finite()) => Err(DataError::InvalidWindow(s)),
            _ => Ok(()),
        }
    }

    /// Parses `default` or a number of seconds (an optional `s` suffix is accepted).
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("default") {
            return Ok(TimeWindow::Default);
        }
        let num = t.strip_suffix('s').unwrap_or(t);
        let v: f64 = num.parse().map_err(|_| DataError::InvalidWindow(f64::NAN))?;
        Self::seconds(v)
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeWindow::Default => write!(f, "default"),
            TimeWindow::Seconds(s) => write!(f, "{s}s"),
        }
    }
}

/// Column names of the aggregated feature schema, in vector order.
pub const FEATURE_NAMES: [&str; 20] = [
    "packet_count",
    "byte_count",
    "duration",
    "pkt_len_mean",
    "pkt_len_std",
    "pkt_len_min",
    "pkt_len_max",
    "iat_mean",
    "iat_std",
    "iat_max",
    "fwd_packets",
    "bwd_packets",
    "fwd_bytes",
    "bwd_bytes",
    "fin_count",
    "syn_count",
    "rst_count",
    "psh_count",
    "ack_count",
    "urg_count",
];

pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

/// One flow (or flow window) as a numeric feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFeatureVector {
    pub key: FlowKey,
    pub window_id: u64,
    pub features: Vec<f64>,
    pub label: Label,
    pub dataset_tag: String,
}

/// Population mean and standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn window_features(pkts: &[&PacketRecord]) -> Vec<f64> {
    let lens: Vec<f64> = pkts.iter().map(|p| p.len as f64).collect();
    let iats: Vec<f64> = pkts.windows(2).map(|w| w[1].ts - w[0].ts).collect();
    let (len_mean, len_std) = mean_std(&lens);
    let (iat_mean, iat_std) = mean_std(&iats);
    let flag = |bit: u16| pkts.iter().filter(|p| p.flags & bit != 0).count() as f64;
    let fwd: Vec<&&PacketRecord> = pkts.iter().filter(|p| p.dir == Direction::Forward).collect();
    let bwd_count = pkts.len() - fwd.len();
    let fwd_bytes: f64 = fwd.iter().map(|p| p.len as f64).sum();
    let byte_count: f64 = lens.iter().sum();
    vec![
        pkts.len() as f64,
        byte_count,
        pkts.last().unwrap().ts - pkts[0].ts,
        len_mean,
        len_std,
        lens.iter().cloned().fold(f64::INFINITY, f64::min),
        lens.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        iat_mean,
        iat_std,
        iats.iter().cloned().fold(0.0, f64::max),
        fwd.len() as f64,
        bwd_count as f64,
        fwd_bytes,
        byte_count - fwd_bytes,
        flag(FLAG_FIN),
        flag(FLAG_SYN),
        flag(FLAG_RST),
        flag(FLAG_PSH),
        flag(FLAG_ACK),
        flag(FLAG_URG),
    ]
}

/// Most frequent label among the packets, ties to the smallest label.
fn window_label(pkts: &[&PacketRecord]) -> Label {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for p in pkts {
        *counts.entry(p.label).or_insert(0) += 1;
    }
    let mut best = (Label::Unlabeled, 0);
    for (l, c) in counts {
        if c > best.1 {
            best = (l, c);
        }
    }
    best.0
}

/// Groups packets by flow key and cuts each flow into windows of `tw`.
///
/// A packet belongs to window `floor((ts - flow_start) / tw)`; empty windows
/// are not emitted. Output is sorted by key, then window.
pub fn aggregate_flows(packets: &[PacketRecord], tw: TimeWindow, tag: &str) -> Result<Vec<FlowFeatureVector>> {
    tw.validate()?;
    if let Some(p) = packets.iter().find(|p| !p.ts.is_finite()) {
        return Err(DataError::Corrupt(format!("non-finite timestamp in flow {}", p.key)));
    }
    let mut by_key: BTreeMap<&FlowKey, Vec<&PacketRecord>> = BTreeMap::new();
    for p in packets {
        by_key.entry(&p.key).or_default().push(p);
    }
    let mut out = Vec::new();
    for (key, mut pkts) in by_key {
        pkts.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        if pkts.windows(2).any(|w| !(w[1].ts - w[0].ts >= 0.0)) {
            return Err(DataError::Corrupt(format!("negative inter-arrival in flow {key}")));
        }
        let start = pkts[0].ts;
        let mut windows: BTreeMap<u64, Vec<&PacketRecord>> = BTreeMap::new();
        for p in pkts {
            let w = match tw {
                TimeWindow::Default => 0,
                TimeWindow::Seconds(s) => ((p.ts - start) / s).floor() as u64,
            };
            windows.entry(w).or_default().push(p);
        }
        for (window_id, ps) in windows {
            out.push(FlowFeatureVector {
                key: key.clone(),
                window_id,
                features: window_features(&ps),
                label: window_label(&ps),
                dataset_tag: tag.to_string(),
            });
        }
    }
    Ok(out)
}

const PACKET_HEADER: [&str; 9] = ["ts", "src", "dst", "sport", "dport", "proto", "len", "dir", "flags"];

fn parse_dir(s: &str) -> Option<Direction> {
    match s.trim().to_ascii_lowercase().as_str() {
        "fwd" | "f" | "0" | "forward" => Some(Direction::Forward),
        "bwd" | "b" | "1" | "backward" => Some(Direction::Backward),
        _ => None,
    }
}

fn parse_flags(s: &str) -> Option<u16> {
    let t = s.trim();
    if t.is_empty() {
        return Some(0);
    }
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16).ok(),
        None => t.parse().ok(),
    }
}

/// Reads a packet-summary CSV (`ts,src,dst,sport,dport,proto,len,dir,flags`
/// with an optional trailing `label` column mapped through `dict`).
pub fn read_packet_csv<R: Read>(reader: R, dict: Option<&ClassDictionary>) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let has_label = header.len() == 10 && header[9] == "label";
    if header.len() < 9 || header[..9] != PACKET_HEADER || (header.len() > 9 && !has_label) {
        return Err(DataError::BadHeader(header.join(",")));
    }
    let mut out = Vec::new();
    let mut unmapped = std::collections::BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |field: &str| DataError::Row {
            row,
            message: format!("invalid {field}"),
        };
        let ts: f64 = rec[0].parse().map_err(|_| bad("ts"))?;
        let sport: u16 = rec[3].parse().map_err(|_| bad("sport"))?;
        let dport: u16 = rec[4].parse().map_err(|_| bad("dport"))?;
        let proto: u8 = rec[5].parse().map_err(|_| bad("proto"))?;
        let len: u32 = rec[6].parse().map_err(|_| bad("len"))?;
        let dir = parse_dir(&rec[7]).ok_or_else(|| bad("dir"))?;
        let flags = parse_flags(&rec[8]).ok_or_else(|| bad("flags"))?;
        let label = if has_label {
            match dict {
                Some(d) => match d.lookup(&rec[9]) {
                    Some(l) => l,
                    None => {
                        unmapped.insert(rec[9].to_string());
                        Label::Unlabeled
                    }
                },
                None => Label::Unlabeled,
            }
        } else {
            Label::Unlabeled
        };
        out.push(PacketRecord {
            key: FlowKey::new(&rec[1], &rec[2], sport, dport, proto),
            ts,
            len,
            dir,
            flags,
            label,
        });
    }
    if !unmapped.is_empty() {
        return Err(DataError::UnmappableLabels(unmapped.into_iter().collect()));
    }
    Ok(out)
}

pub fn read_packet_csv_path(path: &Path, dict: Option<&ClassDictionary>) -> Result<Vec<PacketRecord>> {
    let f = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_packet_csv(f, dict)
}

/// Writes packets in the format accepted by [`read_packet_csv`], labels included.
pub fn write_packet_csv<W: Write>(w: W, packets: &[PacketRecord], dict: &ClassDictionary) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = PACKET_HEADER.to_vec();
    header.push("label");
    wtr.write_record(&header)?;
    for p in packets {
        wtr.write_record(&[
            format!("{}", p.ts),
            p.key.src_addr.clone(),
            p.key.dst_addr.clone(),
            p.key.src_port.to_string(),
            p.key.dst_port.to_string(),
            p.key.protocol.to_string(),
            p.len.to_string(),
            match p.dir {
                Direction::Forward => "fwd".into(),
                Direction::Backward => "bwd".into(),
            },
            p.flags.to_string(),
            dict.name(p.label),
        ])?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
