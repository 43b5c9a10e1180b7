//! Benign-only autoencoder detector with a median/MAD threshold.
//!
//! Reconstruction error is always the MSE between a flow and its
//! reconstruction; the threshold `alpha` is `median(RE) + C * MAD(RE)` over a
//! benign validation set and a flow is malicious iff `RE > alpha`.

use std::io::Write;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::{FlowFeatureVector, Label};
use crate::nn::{self, Activation, Architecture, NnError, ParamVector, ReconstructionMse, TrainConfig, TrainOutcome};

pub const DEFAULT_MAD_MULTIPLIER: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("training flow {index} is labelled {label:?}, detector trains on benign flows only")]
    NonBenign { index: usize, label: Label },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("threshold not computed; run validation first")]
    ThresholdUnset,
    #[error("MAD multiplier must be positive, got {0}")]
    BadMultiplier(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DetectorError>;

/// `d -> 32 -> 16 -> 8 -> 16 -> 32 -> d`, sigmoid throughout.
pub fn default_architecture(d: usize) -> Architecture {
    Architecture::uniform(vec![d, 32, 16, 8, 16, 32, d], Activation::Sigmoid).expect("valid widths")
}

/// Custom widths between input and output, sigmoid throughout.
pub fn architecture_with_hidden(d: usize, hidden: &[usize]) -> std::result::Result<Architecture, NnError> {
    let mut sizes = vec![d];
    sizes.extend_from_slice(hidden);
    sizes.push(d);
    Architecture::uniform(sizes, Activation::Sigmoid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub params: ParamVector,
    /// Set by [`DetectorModel::calibrate`] only.
    pub threshold: Option<f64>,
    pub mad_multiplier: f64,
    pub trained_on: String,
    pub schema_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    /// Position of the flow in the scored batch.
    pub flow: usize,
    pub reconstruction_error: f64,
    pub is_malicious: bool,
}

fn ensure_benign(flows: &[FlowFeatureVector]) -> Result<()> {
    match flows.iter().position(|f| f.label != Label::Benign) {
        Some(index) => Err(DetectorError::NonBenign {
            index,
            label: flows[index].label,
        }),
        None => Ok(()),
    }
}

/// Trains the autoencoder on benign flows with minibatch SGD on the
/// reconstruction MSE.
pub fn train_detector(
    init: &ParamVector,
    benign_train: &[FlowFeatureVector],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    ensure_benign(benign_train)?;
    let data: Vec<&[f64]> = benign_train.iter().map(|f| f.features.as_slice()).collect();
    Ok(nn::train(init, &data, cfg, &ReconstructionMse)?)
}

/// MSE between `x` and its reconstruction.
pub fn reconstruction_error(params: &ParamVector, x: &[f64]) -> Result<f64> {
    let y = params.view().predict(x)?;
    Ok(nn::mse_loss(x, &y))
}

pub fn reconstruction_errors(params: &ParamVector, xs: &[&[f64]]) -> Result<Vec<f64>> {
    xs.iter().map(|x| reconstruction_error(params, x)).collect()
}

/// Median; the mean of the two central order statistics for even lengths.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// `median(re) + c * median(|re - median(re)|)`.
pub fn threshold_from_errors(re: &[f64], c_mad: f64) -> Result<f64> {
    if !(c_mad > 0.0) {
        return Err(DetectorError::BadMultiplier(c_mad));
    }
    let med = median(re).ok_or(DetectorError::EmptyValidation)?;
    let dev: Vec<f64> = re.iter().map(|r| (r - med).abs()).collect();
    let mad = median(&dev).expect("non-empty");
    Ok(med + c_mad * mad)
}

/// Threshold over a labelled benign validation set.
pub fn compute_threshold(params: &ParamVector, benign_val: &[FlowFeatureVector], c_mad: f64) -> Result<f64> {
    ensure_benign(benign_val)?;
    let xs: Vec<&[f64]> = benign_val.iter().map(|f| f.features.as_slice()).collect();
    threshold_from_errors(&reconstruction_errors(params, &xs)?, c_mad)
}

impl DetectorModel {
    pub fn new(params: ParamVector, mad_multiplier: f64, trained_on: impl Into<String>) -> Result<Self> {
        if !(mad_multiplier > 0.0) {
            return Err(DetectorError::BadMultiplier(mad_multiplier));
        }
        Ok(Self {
            params,
            threshold: None,
            mad_multiplier,
            trained_on: trained_on.into(),
            schema_hash: String::new(),
        })
    }

    /// Sets `alpha` from benign validation features.
    pub fn calibrate(&mut self, benign_val: &[&[f64]]) -> Result<f64> {
        let re = reconstruction_errors(&self.params, benign_val)?;
        let a = threshold_from_errors(&re, self.mad_multiplier)?;
        self.threshold = Some(a);
        Ok(a)
    }

    /// Scores feature vectors. Labels are not part of the input.
    pub fn detect(&self, flows: &[&[f64]]) -> Result<Vec<DetectionVerdict>> {
        let alpha = self.threshold.ok_or(DetectorError::ThresholdUnset)?;
        flows
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let re = reconstruction_error(&self.params, x)?;
                Ok(DetectionVerdict {
                    flow: i,
                    reconstruction_error: re,
                    is_malicious: re > alpha,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            params: base64::engine::general_purpose::STANDARD.encode(self.params.to_bytes()),
            threshold: self.threshold,
            mad_multiplier: self.mad_multiplier,
            trained_on: self.trained_on.clone(),
            schema_hash: self.schema_hash.clone(),
        };
        let json = serde_json::to_string_pretty(&file).expect("model file serialises");
        std::fs::write(path, json).map_err(|e| DetectorError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let err = |message: String| DetectorError::ModelFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(err(format!("unsupported format {}", file.format)));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&file.params)
            .map_err(|e| err(e.to_string()))?;
        Ok(Self {
            params: ParamVector::from_bytes(&bytes)?,
            threshold: file.threshold,
            mad_multiplier: file.mad_multiplier,
            trained_on: file.trained_on,
            schema_hash: file.schema_hash,
        })
    }
}

const MODEL_FORMAT: &str = "osfl-detector/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    /// Base64 of the binary parameter layout.
    params: String,
    threshold: Option<f64>,
    mad_multiplier: f64,
    trained_on: String,
    schema_hash: String,
}

/// Append-only buffer of flows judged benign, kept for later retraining.
#[derive(Debug, Default)]
pub struct RetrainStore {
    flows: Vec<Vec<f64>>,
    path: Option<PathBuf>,
}

impl RetrainStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Store that also appends every flow as a CSV line to `path`.
    pub fn with_file(path: PathBuf) -> Self {
        Self {
            flows: Vec::new(),
            path: Some(path),
        }
    }

    pub fn append(&mut self, x: &[f64]) -> std::io::Result<()> {
        if let Some(p) = &self.path {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(p)?;
            let line: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        self.flows.push(x.to_vec());
        Ok(())
    }

    pub fn flows(&self) -> &[Vec<f64>] {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// Reads back a store file written by [`RetrainStore::with_file`].
    pub fn read_file(path: &Path) -> std::io::Result<Vec<Vec<f64>>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
            .collect()
    }
}

/// Scores flows, stores the benign ones and returns the positions of the
/// malicious ones for the classifier stage.
pub fn detect_and_route(
    model: &DetectorModel,
    flows: &[&[f64]],
    store: &mut RetrainStore,
) -> Result<(Vec<DetectionVerdict>, Vec<usize>)> {
    let verdicts = model.detect(flows)?;
    let mut malicious = Vec::new();
    for v in &verdicts {
        if v.is_malicious {
            malicious.push(v.flow);
        } else {
            store.append(flows[v.flow]).map_err(|e| DetectorError::ModelFile {
                path: "<retrain store>".into(),
                message: e.to_string(),
            })?;
        }
    }
    Ok((verdicts, malicious))
}

/// CSV with `flow,re,verdict` columns.
pub fn write_verdicts_csv<W: Write>(w: W, verdicts: &[DetectionVerdict], ids: &[String]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["flow", "re", "verdict"])?;
    for v in verdicts {
        let id = ids.get(v.flow).cloned().unwrap_or_else(|| v.flow.to_string());
        wtr.write_record([
            id,
            format!("{}", v.reconstruction_error),
            if v.is_malicious { "malicious" } else { "benign" }.to_string(),
        ])?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FlowKey;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow(x: Vec<f64>, label: Label) -> FlowFeatureVector {
        FlowFeatureVector {
            key: FlowKey::new("a", "b", 0, 0, 0),
            window_id: 0,
            features: x,
            label,
            dataset_tag: String::new(),
        }
    }

    fn identity(d: usize) -> ParamVector {
        let arch = Architecture::uniform(vec![d, d], Activation::Identity).unwrap();
        let mut v = vec![0.0; arch.param_count()];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        ParamVector::from_values(arch, v).unwrap()
    }

    /// Sorting-free median by order statistic counting, used as an oracle.
    fn oracle_median(xs: &[f64]) -> f64 {
        let kth = |k: usize| -> f64 {
            *xs.iter()
                .find(|&&c| {
                    let below = xs.iter().filter(|&&x| x < c).count();
                    let equal = xs.iter().filter(|&&x| x == c).count();
                    below <= k && k < below + equal
                })
                .unwrap()
        };
        let n = xs.len();
        if n % 2 == 1 {
            kth(n / 2)
        } else {
            (kth(n / 2 - 1) + kth(n / 2)) / 2.0
        }
    }

    #[test]
    fn threshold_hand_example() {
        let a = threshold_from_errors(&[0.1, 0.2, 0.3, 0.4, 10.0], 3.0).unwrap();
        assert!((a - 0.6).abs() < 1e-12);
    }

    #[test]
    fn equal_errors_zero_mad() {
        assert_eq!(threshold_from_errors(&[0.7; 6], 3.0).unwrap(), 0.7);
    }

    #[test]
    fn threshold_matches_oracle_and_is_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let mut re: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let med = oracle_median(&re);
            let dev: Vec<f64> = re.iter().map(|r| (r - med).abs()).collect();
            let expected = med + 3.0 * oracle_median(&dev);
            assert_eq!(threshold_from_errors(&re, 3.0).unwrap(), expected);
            re.reverse();
            assert_eq!(threshold_from_errors(&re, 3.0).unwrap(), expected);
        }
    }

    #[test]
    fn empty_validation_rejected() {
        assert!(matches!(
            threshold_from_errors(&[], 3.0),
            Err(DetectorError::EmptyValidation)
        ));
    }

    #[test]
    fn identity_net_has_zero_error() {
        let p = identity(3);
        assert_eq!(reconstruction_error(&p, &[0.3, 4.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_reconstruction_error() {
        let arch = Architecture::uniform(vec![2, 2], Activation::Identity).unwrap();
        let p = ParamVector::zeros(arch);
        assert_eq!(reconstruction_error(&p, &[1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn strict_inequality_at_threshold() {
        let arch = Architecture::uniform(vec![2, 2], Activation::Identity).unwrap();
        let mut m = DetectorModel::new(ParamVector::zeros(arch), 3.0, "t").unwrap();
        m.threshold = Some(0.5);
        let xs: [&[f64]; 2] = [&[1.0, 0.0], &[1.2, 0.0]];
        let v = m.detect(&xs).unwrap();
        assert!(!v[0].is_malicious);
        assert!(v[1].is_malicious);
        m.threshold = Some(0.6);
        assert!(m.detect(&[&[1.1833, 0.0]]).unwrap()[0].is_malicious);
    }

    #[test]
    fn detect_requires_threshold() {
        let m = DetectorModel::new(identity(2), 3.0, "t").unwrap();
        assert!(matches!(m.detect(&[&[0.0, 0.0]]), Err(DetectorError::ThresholdUnset)));
    }

    #[test]
    fn attack_label_rejected_for_training() {
        let p = ParamVector::init(default_architecture(2), 0);
        let flows = vec![
            flow(vec![0.1, 0.2], Label::Benign),
            flow(vec![0.1, 0.2], Label::Attack(1)),
        ];
        assert!(matches!(
            train_detector(&p, &flows, &TrainConfig::default()),
            Err(DetectorError::NonBenign { index: 1, .. })
        ));
        assert!(compute_threshold(&p, &flows, 3.0).is_err());
    }

    #[test]
    fn zero_epochs_keeps_init() {
        let p = ParamVector::init(default_architecture(3), 4);
        let flows = vec![flow(vec![0.1, 0.2, 0.3], Label::Benign)];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_detector(&p, &flows, &cfg).unwrap();
        assert_eq!(out.params, p);
    }

    #[test]
    fn raising_multiplier_never_adds_alarms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let re: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let scored: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..2.0)).collect();
        let mut prev = usize::MAX;
        for c in [0.5, 1.0, 2.0, 3.0, 5.0, 8.0] {
            let a = threshold_from_errors(&re, c).unwrap();
            let count = scored.iter().filter(|&&r| r > a).count();
            assert!(count <= prev);
            prev = count;
        }
    }

    #[test]
    fn model_file_round_trip_and_routing() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DetectorModel::new(ParamVector::init(default_architecture(2), 1), 3.0, "t").unwrap();
        m.calibrate(&[&[0.2, 0.3], &[0.25, 0.35], &[0.1, 0.2]]).unwrap();
        m.save(&dir.path().join("m.json")).unwrap();
        let back = DetectorModel::load(&dir.path().join("m.json")).unwrap();
        assert_eq!(back, m);

        let mut store = RetrainStore::with_file(dir.path().join("dk.csv"));
        let xs: [&[f64]; 2] = [&[0.2, 0.3], &[50.0, -50.0]];
        let (v, mal) = detect_and_route(&m, &xs, &mut store).unwrap();
        assert_eq!(mal, vec![1]);
        assert!(!v[0].is_malicious);
        assert_eq!(store.len(), 1);
        assert_eq!(
            RetrainStore::read_file(&dir.path().join("dk.csv")).unwrap(),
            vec![vec![0.2, 0.3]]
        );
    }
}
