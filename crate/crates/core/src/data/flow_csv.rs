use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flows::{FlowKey, FEATURE_DIM, FEATURE_NAMES};
use super::{ClassDictionary, DataError, FlowFeatureVector, Result};

/// Column mapping for a flow-feature CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    /// `[src, dst, sport, dport, proto]`; rows get a synthetic key when absent.
    #[serde(default)]
    pub key_columns: Option<[String; 5]>,
    #[serde(default)]
    pub window_column: Option<String>,
    #[serde(default = "default_tag")]
    pub dataset_tag: String,
}

fn default_tag() -> String {
    "csv".into()
}

impl FlowSchema {
    /// Schema matching the files produced by [`write_flow_csv`].
    pub fn written(dim: usize) -> Self {
        Self {
            feature_columns: feature_headers(dim),
            label_column: "label".into(),
            key_columns: Some(["src", "dst", "sport", "dport", "proto"].map(String::from)),
            window_column: Some("window".into()),
            dataset_tag: default_tag(),
        }
    }
}

fn feature_headers(dim: usize) -> Vec<String> {
    if dim == FEATURE_DIM {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..dim).map(|i| format!("f{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row index (header excluded).
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub flows: Vec<FlowFeatureVector>,
    pub row_errors: Vec<RowError>,
}

/// Loads a flow CSV. In strict mode the first bad row is an error; otherwise
/// bad rows are skipped and reported.
pub fn load_flow_csv(path: &Path, schema: &FlowSchema, dict: &ClassDictionary, strict: bool) -> Result<LoadReport> {
    let f = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_flow_csv(f, schema, dict, strict)
}

pub fn read_flow_csv<R: Read>(
    reader: R,
    schema: &FlowSchema,
    dict: &ClassDictionary,
    strict: bool,
) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = col(&schema.label_column)?;
    let key_idx = match &schema.key_columns {
        Some(cols) => Some(cols.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?),
        None => None,
    };
    let window_idx = schema.window_column.as_deref().map(col).transpose()?;

    let mut report = LoadReport::default();
    let mut unmapped = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let parsed = (|| -> std::result::Result<FlowFeatureVector, String> {
            let mut features = Vec::with_capacity(feature_idx.len());
            for (&j, name) in feature_idx.iter().zip(&schema.feature_columns) {
                let cell = &rec[j];
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => features.push(v),
                    _ => return Err(format!("non-numeric value `{cell}` in column `{name}`")),
                }
            }
            let key = match &key_idx {
                Some(k) => {
                    let port = |j: usize| {
                        rec[k[j]]
                            .parse::<u16>()
                            .map_err(|_| format!("bad port `{}`", &rec[k[j]]))
                    };
                    let proto = rec[k[4]]
                        .parse::<u8>()
                        .map_err(|_| format!("bad protocol `{}`", &rec[k[4]]))?;
                    FlowKey::new(&rec[k[0]], &rec[k[1]], port(2)?, port(3)?, proto)
                }
                None => FlowKey::new(format!("row{row}"), "-", 0, 0, 0),
            };
            let window_id = match window_idx {
                Some(w) => rec[w].parse::<u64>().map_err(|_| format!("bad window `{}`", &rec[w]))?,
                None => 0,
            };
            let raw = &rec[label_idx];
            let label = match dict.lookup(raw) {
                Some(l) => l,
                None => {
                    unmapped.insert(raw.to_string());
                    super::Label::Unlabeled
                }
            };
            Ok(FlowFeatureVector {
                key,
                window_id,
                features,
                label,
                dataset_tag: schema.dataset_tag.clone(),
            })
        })();
        match parsed {
            Ok(f) => report.flows.push(f),
            Err(message) if strict => return Err(DataError::Row { row, message }),
            Err(message) => report.row_errors.push(RowError { row, message }),
        }
    }
    if !unmapped.is_empty() {
        return Err(DataError::UnmappableLabels(unmapped.into_iter().collect()));
    }
    Ok(report)
}

/// Writes flows with key, window, features and label columns.
pub fn write_flow_csv<W: Write>(w: W, flows: &[FlowFeatureVector], dict: &ClassDictionary) -> Result<()> {
    let dim = flows.first().map_or(FEATURE_DIM, |f| f.features.len());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["src", "dst", "sport", "dport", "proto", "window"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(feature_headers(dim));
    header.push("label".into());
    wtr.write_record(&header)?;
    for f in flows {
        if f.features.len() != dim {
            return Err(DataError::Dimension {
                expected: dim,
                got: f.features.len(),
            });
        }
        let mut row = vec![
            f.key.src_addr.clone(),
            f.key.dst_addr.clone(),
            f.key.src_port.to_string(),
            f.key.dst_port.to_string(),
            f.key.protocol.to_string(),
            f.window_id.to_string(),
        ];
        row.extend(f.features.iter().map(|v| format!("{v}")));
        row.push(dict.name(f.label));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
