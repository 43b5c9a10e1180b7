//! Experiment drivers: scenario runs on the chain, the time-window and DP
//! sweeps (chain-free federated driver), and the poisoning experiment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{
    auroc, compute_metrics, per_class_counts, tnr_at_tpr, ConfusionCounts, MetricError, ThresholdMetrics,
};
use super::report::REPORT_SCHEMA;
use crate::chain::{run_training, AggregationRule, SimConfig, SimData, SimError, SimOutcome, StopReason};
use crate::classifier::{confidence, threshold_from_confidences, ClassifierError, McddModel};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    aggregate_flows, class_histogram, load_flow_csv, make_scenarios, read_packet_csv_path, synth_packets,
    synth_traffic, DataError, FlowFeatureVector, Label, NormMethod, NormalizerState, Scenario, TimeWindow,
};
use crate::detector::{self, architecture_with_hidden, default_architecture, DetectorError};
use crate::federated::{
    partition, run_round, Client, FedError, LocalUpdateConfig, McddTask, PartitionMode, ReconstructionTask,
    RoundConfig, ValidationPolicy,
};
use crate::nn::{ParamVector, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("time-window sweep needs packet-level input; {0} input cannot be re-windowed")]
    CannotRewindow(&'static str),
    #[error("no scenario holds out class {0}")]
    NoScenario(u32),
    #[error("scenario for class {0} has no N-day class to train the classifier on")]
    NoNDay(u32),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Flows from the configured source. `tw` overrides the window of
/// packet-level sources.
pub fn load_flows(cfg: &ExperimentConfig, tw: Option<TimeWindow>, seed: u64) -> Result<Vec<FlowFeatureVector>> {
    let data_seed = crate::derive_seed(seed, "data", 0);
    let window = |s: &str| -> Result<TimeWindow> { Ok(tw.unwrap_or(TimeWindow::parse(s)?)) };
    Ok(match &cfg.data {
        DataSource::Synthetic { generator } => {
            if tw.is_some() {
                return Err(EvalError::CannotRewindow("synthetic flow-feature"));
            }
            synth_traffic(generator, data_seed)?
        }
        DataSource::SyntheticPackets { generator, time_window } => aggregate_flows(
            &synth_packets(generator, data_seed)?,
            window(time_window)?,
            "synthetic-packets",
        )?,
        DataSource::PacketCsv {
            path,
            dictionary,
            time_window,
        } => aggregate_flows(
            &read_packet_csv_path(path, Some(dictionary))?,
            window(time_window)?,
            "packet-csv",
        )?,
        DataSource::FlowCsv {
            path,
            schema,
            dictionary,
            subsample,
        } => {
            if tw.is_some() {
                return Err(EvalError::CannotRewindow("flow CSV"));
            }
            let mut flows = load_flow_csv(path, schema, dictionary, false)?.flows;
            if let Some(n) = *subsample {
                flows = subsample_flows(flows, n, data_seed);
            }
            flows
        }
    })
}

/// Seeded subsample of `n` flows, kept in input order.
pub fn subsample_flows(flows: Vec<FlowFeatureVector>, n: usize, seed: u64) -> Vec<FlowFeatureVector> {
    if flows.len() <= n {
        return flows;
    }
    let mut idx: Vec<usize> = (0..flows.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    let mut keep = vec![false; flows.len()];
    for i in idx {
        keep[i] = true;
    }
    flows
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(f, _)| f)
        .collect()
}

/// A scenario with features normalised by a map fitted on its training
/// manifest.
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub flows: Vec<FlowFeatureVector>,
    pub norm: NormalizerState,
    /// N-day attack ids, indexed by dense label.
    pub classes: Vec<u32>,
}

impl PreparedScenario {
    pub fn new(raw: &[FlowFeatureVector], scenario: Scenario, method: NormMethod) -> Result<Self> {
        let manifest: Vec<usize> = scenario.training_manifest().collect();
        let norm = NormalizerState::fit(&Scenario::select(raw, &manifest), method)?;
        let flows = norm.apply(raw)?;
        let classes = scenario.spec.n_day_classes.iter().copied().collect();
        Ok(Self {
            scenario,
            flows,
            norm,
            classes,
        })
    }

    pub fn features(&self, idx: &[usize]) -> Vec<&[f64]> {
        idx.iter().map(|&i| self.flows[i].features.as_slice()).collect()
    }

    /// N-day attack flows of `idx` with dense labels.
    pub fn attack_set(&self, idx: &[usize]) -> (Vec<&[f64]>, Vec<usize>) {
        idx.iter()
            .filter_map(|&i| {
                let f = &self.flows[i];
                let c = f.label.attack_id()?;
                let y = self.classes.binary_search(&c).ok()?;
                Some((f.features.as_slice(), y))
            })
            .unzip()
    }

    fn zero_day(&self) -> u32 {
        self.scenario.spec.zero_day_class
    }
}

/// Scenarios of `flows`, prepared.
pub fn prepare_scenarios(
    cfg: &ExperimentConfig,
    flows: &[FlowFeatureVector],
    seed: u64,
) -> Result<Vec<PreparedScenario>> {
    make_scenarios(
        flows,
        cfg.benign_split,
        cfg.attack_split,
        crate::derive_seed(seed, "split", 0),
    )?
    .into_iter()
    .map(|s| PreparedScenario::new(flows, s, cfg.norm))
    .collect()
}

/// Client datasets for the chain simulation.
pub fn sim_data<'a>(p: &'a PreparedScenario, sim: &SimConfig, mode: PartitionMode, seed: u64) -> Result<SimData<'a>> {
    let sc = &p.scenario;
    let benign = p.features(&sc.ad_train);
    let cav_parts = partition(
        &vec![0u8; benign.len()],
        sim.topology.n_cav,
        mode,
        crate::derive_seed(seed, "cav-split", 0),
    )?;
    let (axs, ays) = p.attack_set(&sc.ac_train);
    let mec_parts = partition(&ays, sim.topology.n_mec, mode, crate::derive_seed(seed, "mec-split", 0))?;
    Ok(SimData {
        cav_benign: cav_parts
            .iter()
            .map(|part| part.iter().map(|&i| benign[i]).collect())
            .collect(),
        mec_attack: mec_parts
            .iter()
            .map(|part| {
                (
                    part.iter().map(|&i| axs[i]).collect(),
                    part.iter().map(|&i| ays[i]).collect(),
                )
            })
            .collect(),
        b_test: p.features(&sc.ad_val),
        classes: p.classes.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSection {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: ThresholdMetrics,
    pub auroc: Option<f64>,
    pub tnr85: Option<f64>,
    /// `(reconstruction error, is attack)` per test flow.
    pub scores: Vec<(f64, bool)>,
}

/// Detector metrics with malicious as the positive class; `alpha` is
/// calibrated on `reference`.
pub fn evaluate_detector(
    ad: &ParamVector,
    reference: &[&[f64]],
    mad_multiplier: f64,
    test: &[(&[f64], bool)],
) -> Result<DetectionSection> {
    let threshold = detector::threshold_from_errors(&detector::reconstruction_errors(ad, reference)?, mad_multiplier)?;
    let xs: Vec<&[f64]> = test.iter().map(|t| t.0).collect();
    let re = detector::reconstruction_errors(ad, &xs)?;
    let scores: Vec<(f64, bool)> = re.iter().zip(test).map(|(r, t)| (*r, t.1)).collect();
    let counts = ConfusionCounts::tally(scores.iter().map(|(r, a)| (*r > threshold, *a)));
    Ok(DetectionSection {
        threshold,
        counts,
        metrics: compute_metrics(&counts),
        auroc: auroc(&scores).ok(),
        tnr85: tnr_at_tpr(&scores, 0.85).ok(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: u32,
    pub counts: ConfusionCounts,
    pub metrics: ThresholdMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedSetSection {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassRow>,
}

/// Argmax predictions on known-class flows.
pub fn evaluate_closed_set(model: &McddModel, xs: &[&[f64]], ys: &[usize]) -> Result<ClosedSetSection> {
    let mut pairs = Vec::with_capacity(xs.len());
    for (x, y) in xs.iter().zip(ys) {
        let pred = model.predict_dense(&model.distances(x)?);
        pairs.push((model.classes[pred], model.classes[*y]));
    }
    let correct = pairs.iter().filter(|(p, a)| p == a).count();
    let per_class: Vec<ClassRow> = per_class_counts(&pairs)
        .into_iter()
        .map(|(class, counts)| ClassRow {
            class,
            counts,
            metrics: compute_metrics(&counts),
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|r| r.metrics.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok(ClosedSetSection {
        n: pairs.len(),
        correct,
        accuracy: if pairs.is_empty() {
            0.0
        } else {
            correct as f64 / pairs.len() as f64
        },
        macro_f1,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroDaySection {
    pub zero_day_class: u32,
    pub conf_threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: ThresholdMetrics,
    pub auroc: Option<f64>,
    pub tnr85: Option<f64>,
    /// `(-confidence, is 0-day)` per attack test flow.
    pub scores: Vec<(f64, bool)>,
}

/// Open-set metrics with the held-out class as the positive class.
pub fn evaluate_zero_day(
    model: &McddModel,
    conf_threshold: f64,
    test: &[(&[f64], bool)],
    zero_day_class: u32,
) -> Result<ZeroDaySection> {
    let mut scores = Vec::with_capacity(test.len());
    for (x, zd) in test {
        scores.push((-confidence(&model.distances(x)?), *zd));
    }
    let counts = ConfusionCounts::tally(scores.iter().map(|(s, zd)| (-s < conf_threshold, *zd)));
    Ok(ZeroDaySection {
        zero_day_class,
        conf_threshold,
        counts,
        metrics: compute_metrics(&counts),
        auroc: auroc(&scores).ok(),
        tnr85: tnr_at_tpr(&scores, 0.85).ok(),
        scores,
    })
}

/// `C_S` of `model` over `xs`.
pub fn conf_threshold(model: &McddModel, xs: &[&[f64]], percentile: Option<f64>) -> Result<f64> {
    let conf = xs
        .iter()
        .map(|x| Ok(confidence(&model.distances(x)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(threshold_from_confidences(&conf, percentile)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub rounds: usize,
    pub stop: StopReason,
    pub height: u64,
    pub tip: String,
    pub mean_gains: Vec<f64>,
    pub txs_per_block: Vec<usize>,
    pub consensus_messages: u64,
    pub transaction_messages: u64,
    pub propagation_messages: u64,
    pub offchain_messages: u64,
    pub excluded: Vec<u32>,
}

impl ChainSummary {
    pub fn of(o: &SimOutcome) -> Self {
        use crate::chain::MsgClass;
        Self {
            rounds: o.rounds.len(),
            stop: o.stop.clone(),
            height: o.ledger.height(),
            tip: o.ledger.tip().hash.to_string(),
            mean_gains: o.rounds.iter().map(|r| r.mean_gain).collect(),
            txs_per_block: o.rounds.iter().map(|r| r.txs_in_block).collect(),
            consensus_messages: o.counters.of(MsgClass::Consensus),
            transaction_messages: o.counters.of(MsgClass::Transaction),
            propagation_messages: o.counters.of(MsgClass::Propagation),
            offchain_messages: o.offchain_messages,
            excluded: o.reputation.excluded().into_iter().map(|n| n.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub schema: &'static str,
    pub fingerprint: String,
    pub seed: u64,
    /// `IID` or `Non-IID` (Dirichlet label skew).
    pub partition: &'static str,
    pub zero_day_class: u32,
    pub n_day_classes: Vec<u32>,
    /// Label counts over every training and validation index.
    pub training_counts: BTreeMap<String, usize>,
    pub zero_day_in_training: usize,
    /// Per-MEC attack label counts.
    pub client_histograms: Vec<BTreeMap<u32, usize>>,
    pub chain: ChainSummary,
    pub detection: DetectionSection,
    pub n_day: ClosedSetSection,
    pub zero_day: ZeroDaySection,
}

fn label_name(l: Label) -> String {
    match l {
        Label::Benign => "benign".into(),
        Label::Attack(c) => format!("attack:{c}"),
        Label::Unlabeled => "unlabeled".into(),
    }
}

/// Trains both models on the chain for one scenario and evaluates them.
pub fn run_scenario(cfg: &ExperimentConfig, p: &PreparedScenario, seed: u64) -> Result<(ScenarioReport, SimOutcome)> {
    run_scenario_with(cfg, &cfg.sim, p, seed)
}

/// [`run_scenario`] with an explicit simulation config.
pub fn run_scenario_with(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    p: &PreparedScenario,
    seed: u64,
) -> Result<(ScenarioReport, SimOutcome)> {
    let sc = &p.scenario;
    if sc.ac_skipped() {
        return Err(EvalError::NoNDay(p.zero_day()));
    }
    let data = sim_data(p, sim, cfg.partition, seed)?;
    let out = run_training(sim, &data, seed)?;
    let manifest: Vec<usize> = sc.training_manifest().collect();
    let training = Scenario::select(&p.flows, &manifest);
    let training_counts = class_histogram(&training)
        .into_iter()
        .map(|(l, n)| (label_name(l), n))
        .collect();
    let zero_day_in_training = training
        .iter()
        .filter(|f| f.label == Label::Attack(p.zero_day()))
        .count();
    let client_histograms = data
        .mec_attack
        .iter()
        .map(|(_, ys)| {
            let mut h = BTreeMap::new();
            for y in ys {
                *h.entry(p.classes[*y]).or_insert(0) += 1;
            }
            h
        })
        .collect();
    let report = evaluate_models(cfg, sim, p, &out.ad, &out.ac, &data)?;
    Ok((
        ScenarioReport {
            schema: REPORT_SCHEMA,
            fingerprint: cfg.fingerprint(),
            seed,
            partition: cfg.partition.tag(),
            zero_day_class: p.zero_day(),
            n_day_classes: p.classes.clone(),
            training_counts,
            zero_day_in_training,
            client_histograms,
            chain: ChainSummary::of(&out),
            detection: report.0,
            n_day: report.1,
            zero_day: report.2,
        },
        out,
    ))
}

fn evaluate_models(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    p: &PreparedScenario,
    ad: &ParamVector,
    ac: &McddModel,
    data: &SimData<'_>,
) -> Result<(DetectionSection, ClosedSetSection, ZeroDaySection)> {
    let sc = &p.scenario;
    let test: Vec<(&[f64], bool)> = sc
        .test
        .iter()
        .map(|&i| (p.flows[i].features.as_slice(), !p.flows[i].label.is_benign()))
        .collect();
    let detection = evaluate_detector(ad, &data.b_test, sim.mad_multiplier, &test)?;
    let (nx, ny) = p.attack_set(&sc.test);
    let n_day = evaluate_closed_set(ac, &nx, &ny)?;
    let (tx, _) = p.attack_set(&sc.ac_train);
    let cs = conf_threshold(ac, &tx, cfg.classifier.threshold_percentile)?;
    let zd = Label::Attack(p.zero_day());
    let open: Vec<(&[f64], bool)> = sc
        .test
        .iter()
        .filter(|&&i| !p.flows[i].label.is_benign())
        .map(|&i| (p.flows[i].features.as_slice(), p.flows[i].label == zd))
        .collect();
    let zero_day = evaluate_zero_day(ac, cs, &open, p.zero_day())?;
    Ok((detection, n_day, zero_day))
}

/// Detector initial weights for `dim` inputs.
pub fn detector_init(hidden: Option<&[usize]>, dim: usize, seed: u64) -> Result<ParamVector> {
    let arch = match hidden {
        Some(h) => architecture_with_hidden(dim, h).map_err(DetectorError::from)?,
        None => default_architecture(dim),
    };
    Ok(ParamVector::init(arch, crate::derive_seed(seed, "ad-init", 0)))
}

/// Chain-free federated detector training over `rounds` rounds.
pub fn fl_detector(
    init: &ParamVector,
    clients: &[Vec<&[f64]>],
    reference: &[&[f64]],
    local: &LocalUpdateConfig,
    validation: ValidationPolicy,
    rounds: u64,
    seed: u64,
) -> Result<ParamVector> {
    let tasks: Vec<ReconstructionTask> = clients.iter().map(|c| ReconstructionTask { data: c.clone() }).collect();
    let cl: Vec<Client<'_, ReconstructionTask>> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Client {
            id: i as u32,
            task: t,
            arrival_tick: 0,
        })
        .collect();
    let reference = ReconstructionTask {
        data: reference.to_vec(),
    };
    let rc = RoundConfig {
        local: local.clone(),
        validation,
        tau: 0,
        seed,
    };
    let mut g = init.clone();
    for r in 1..=rounds {
        g = run_round(&g, &cl, &reference, &rc, r)?.0;
    }
    Ok(g)
}

/// Chain-free federated classifier training, validation disabled.
pub fn fl_classifier(
    init: &McddModel,
    clients: &[(Vec<&[f64]>, Vec<usize>)],
    local: &TrainConfig,
    rounds: u64,
    seed: u64,
) -> Result<McddModel> {
    let tasks: Vec<McddTask> = clients
        .iter()
        .filter(|(xs, _)| !xs.is_empty())
        .map(|(xs, ys)| McddTask {
            xs: xs.clone(),
            ys: ys.clone(),
        })
        .collect();
    let reference = McddTask {
        xs: tasks.iter().flat_map(|t| t.xs.clone()).collect(),
        ys: tasks.iter().flat_map(|t| t.ys.clone()).collect(),
    };
    let cl: Vec<Client<'_, McddTask>> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Client {
            id: i as u32,
            task: t,
            arrival_tick: 0,
        })
        .collect();
    let rc = RoundConfig {
        local: LocalUpdateConfig::plain(local.clone()),
        validation: ValidationPolicy::DISABLED,
        tau: 0,
        seed,
    };
    let mut g = init.clone();
    for r in 1..=rounds {
        g = run_round(&g, &cl, &reference, &rc, r)?.0;
    }
    Ok(g)
}

fn split_clients<'a>(xs: &[&'a [f64]], n: usize, mode: PartitionMode, seed: u64) -> Result<Vec<Vec<&'a [f64]>>> {
    let parts = partition(&vec![0u8; xs.len()], n, mode, seed)?;
    Ok(parts.iter().map(|p| p.iter().map(|&i| xs[i]).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwRow {
    pub time_window: String,
    pub n_flows: usize,
    pub detection_accuracy: f64,
    pub detection_f1: f64,
    pub n_day_accuracy: f64,
    pub n_day_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwSweepReport {
    pub schema: &'static str,
    pub fingerprint: String,
    pub seed: u64,
    pub driver: &'static str,
    pub rows: Vec<TwRow>,
}

fn tw_key(tw: &TimeWindow) -> (u8, f64) {
    match tw {
        TimeWindow::Seconds(s) => (0, *s),
        TimeWindow::Default => (1, 0.0),
    }
}

/// One pipeline run per window, rows sorted by window (`default` last).
pub fn sweep_time_windows(cfg: &ExperimentConfig, tws: &[TimeWindow], seed: u64) -> Result<TwSweepReport> {
    if matches!(cfg.data, DataSource::Synthetic { .. } | DataSource::FlowCsv { .. }) {
        let what = if matches!(cfg.data, DataSource::FlowCsv { .. }) {
            "flow CSV"
        } else {
            "synthetic flow-feature"
        };
        return Err(EvalError::CannotRewindow(what));
    }
    let mut tws = tws.to_vec();
    tws.sort_by(|a, b| tw_key(a).partial_cmp(&tw_key(b)).unwrap());
    tws.dedup();
    let mut rows = Vec::new();
    for tw in tws {
        let flows = load_flows(cfg, Some(tw), seed)?;
        let p = prepare_scenarios(cfg, &flows, seed)?
            .into_iter()
            .find(|p| !p.scenario.ac_skipped())
            .ok_or(EvalError::NoNDay(0))?;
        let (det, closed) = fl_pipeline(cfg, &p, seed)?;
        rows.push(TwRow {
            time_window: tw.to_string(),
            n_flows: flows.len(),
            detection_accuracy: det.metrics.accuracy,
            detection_f1: det.metrics.f1,
            n_day_accuracy: closed.accuracy,
            n_day_macro_f1: closed.macro_f1,
        });
    }
    Ok(TwSweepReport {
        schema: REPORT_SCHEMA,
        fingerprint: cfg.fingerprint(),
        seed,
        driver: "federated (chain-free)",
        rows,
    })
}

/// Detector and closed-set classifier through the chain-free driver.
fn fl_pipeline(
    cfg: &ExperimentConfig,
    p: &PreparedScenario,
    seed: u64,
) -> Result<(DetectionSection, ClosedSetSection)> {
    let sc = &p.scenario;
    let k = cfg.sweeps.fl_clients;
    let benign = p.features(&sc.ad_train);
    let dim = benign.first().map(|x| x.len()).ok_or(DataError::Empty)?;
    let clients = split_clients(&benign, k, cfg.partition, crate::derive_seed(seed, "cav-split", 0))?;
    let reference = p.features(&sc.ad_val);
    let init = detector_init(cfg.sim.ad_hidden.as_deref(), dim, seed)?;
    let ad = fl_detector(
        &init,
        &clients,
        &reference,
        &cfg.sim.ad_local,
        cfg.sim.validation,
        cfg.sweeps.fl_rounds,
        crate::derive_seed(seed, "cav", 0),
    )?;
    let test: Vec<(&[f64], bool)> = sc
        .test
        .iter()
        .map(|&i| (p.flows[i].features.as_slice(), !p.flows[i].label.is_benign()))
        .collect();
    let det = evaluate_detector(&ad, &reference, cfg.sim.mad_multiplier, &test)?;

    let (axs, ays) = p.attack_set(&sc.ac_train);
    let parts = partition(&ays, k, cfg.partition, crate::derive_seed(seed, "mec-split", 0))?;
    let ac_clients: Vec<(Vec<&[f64]>, Vec<usize>)> = parts
        .iter()
        .map(|part| {
            (
                part.iter().map(|&i| axs[i]).collect(),
                part.iter().map(|&i| ays[i]).collect(),
            )
        })
        .collect();
    let mut mcdd = cfg.classifier.clone();
    mcdd.init_seed = crate::derive_seed(seed, "ac-init", 0);
    let init_ac = McddModel::init(&mcdd, dim, p.classes.clone(), &ac_clients[0].0, &ac_clients[0].1)?;
    let ac = fl_classifier(
        &init_ac,
        &ac_clients,
        &cfg.sim.ac_local,
        cfg.sweeps.fl_rounds,
        crate::derive_seed(seed, "mec", 0),
    )?;
    let (nx, ny) = p.attack_set(&sc.test);
    Ok((det, evaluate_closed_set(&ac, &nx, &ny)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpRow {
    /// `None` is the no-DP baseline.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub detection: DetectionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpSummary {
    pub epsilon: Option<f64>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpSweepReport {
    pub schema: &'static str,
    pub fingerprint: String,
    pub driver: &'static str,
    pub clip_bound: f64,
    pub delta_dp: f64,
    pub rows: Vec<DpRow>,
    pub summary: Vec<DpSummary>,
}

/// Detector accuracy without DP and at each `epsilon`, for every seed.
///
/// Validation is disabled so that noised updates are aggregated rather
/// than rejected.
pub fn dp_sweep(
    cfg: &ExperimentConfig,
    p: &PreparedScenario,
    epsilons: &[f64],
    seeds: &[u64],
) -> Result<DpSweepReport> {
    let sc = &p.scenario;
    let benign = p.features(&sc.ad_train);
    let dim = benign.first().map(|x| x.len()).ok_or(DataError::Empty)?;
    let reference = p.features(&sc.ad_val);
    let test: Vec<(&[f64], bool)> = sc
        .test
        .iter()
        .map(|&i| (p.flows[i].features.as_slice(), !p.flows[i].label.is_benign()))
        .collect();
    let settings: Vec<Option<f64>> = std::iter::once(None).chain(epsilons.iter().map(|e| Some(*e))).collect();
    let s = &cfg.sweeps;
    let mut rows = Vec::new();
    for &seed in seeds {
        let clients = split_clients(
            &benign,
            s.fl_clients,
            cfg.partition,
            crate::derive_seed(seed, "cav-split", 0),
        )?;
        let init = detector_init(cfg.sim.ad_hidden.as_deref(), dim, seed)?;
        for eps in &settings {
            let mut local = cfg.sim.ad_local.clone();
            if let Some(e) = eps {
                local.clip_bound = Some(s.dp_clip);
                local.dp_enabled = true;
                local.epsilon = *e;
                local.delta_dp = s.dp_delta;
            }
            let ad = fl_detector(
                &init,
                &clients,
                &reference,
                &local,
                ValidationPolicy::DISABLED,
                s.fl_rounds,
                crate::derive_seed(seed, "cav", 0),
            )?;
            rows.push(DpRow {
                epsilon: *eps,
                seed,
                sigma: eps.map(|e| crate::federated::gaussian_sigma(e, s.dp_delta, s.dp_clip)),
                detection: evaluate_detector(&ad, &reference, cfg.sim.mad_multiplier, &test)?,
            });
        }
    }
    let summary = settings
        .iter()
        .map(|eps| {
            let rs: Vec<&DpRow> = rows.iter().filter(|r| r.epsilon == *eps).collect();
            let n = rs.len().max(1) as f64;
            DpSummary {
                epsilon: *eps,
                mean_accuracy: rs.iter().map(|r| r.detection.metrics.accuracy).sum::<f64>() / n,
                mean_f1: rs.iter().map(|r| r.detection.metrics.f1).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(DpSweepReport {
        schema: REPORT_SCHEMA,
        fingerprint: cfg.fingerprint(),
        driver: "federated (chain-free)",
        clip_bound: s.dp_clip,
        delta_dp: s.dp_delta,
        rows,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoisonRow {
    pub malicious_frac: f64,
    pub exclusion: bool,
    pub malicious: Vec<u32>,
    pub n_day_accuracy: f64,
    pub detection_accuracy: f64,
    /// Clean minus this run.
    pub n_day_degradation: f64,
    pub detection_degradation: f64,
    pub excluded: Vec<u32>,
    pub rounds: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoisonReport {
    pub schema: &'static str,
    pub fingerprint: String,
    pub seed: u64,
    pub baseline: PoisonRow,
    pub rows: Vec<PoisonRow>,
}

/// The first `round(frac * workers)` initial workers.
pub fn malicious_nodes(sim: &SimConfig, frac: f64) -> Vec<u32> {
    let v = sim.topology.n_validators() as u32;
    let workers = sim.topology.n_mec as u32 - v;
    let k = (frac * workers as f64).round() as u32;
    (v..v + k.min(workers)).collect()
}

/// Simulation config for one poisoning run. Turning exclusion off also
/// disables update validation and aggregates every block transaction
/// regardless of its gain.
pub fn poison_config(base: &SimConfig, malicious: Vec<u32>, exclusion: bool) -> SimConfig {
    let mut s = base.clone();
    s.malicious = malicious;
    s.exclusion = exclusion;
    if !exclusion {
        s.validation = ValidationPolicy::DISABLED;
        s.aggregation = AggregationRule::All;
    }
    s
}

fn poison_row(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    p: &PreparedScenario,
    frac: f64,
    seed: u64,
) -> Result<PoisonRow> {
    let (r, out) = run_scenario_with(cfg, sim, p, seed)?;
    Ok(PoisonRow {
        malicious_frac: frac,
        exclusion: sim.exclusion,
        malicious: sim.malicious.clone(),
        n_day_accuracy: r.n_day.accuracy,
        detection_accuracy: r.detection.metrics.accuracy,
        n_day_degradation: 0.0,
        detection_degradation: 0.0,
        excluded: r.chain.excluded,
        rounds: out.rounds.len(),
        stop: out.stop,
    })
}

/// A clean run, then one run per malicious fraction.
pub fn poison_test(
    cfg: &ExperimentConfig,
    p: &PreparedScenario,
    fracs: &[f64],
    exclusion: bool,
    seed: u64,
) -> Result<PoisonReport> {
    let baseline = poison_row(cfg, &poison_config(&cfg.sim, Vec::new(), true), p, 0.0, seed)?;
    let mut rows = Vec::new();
    for &f in fracs {
        let sim = poison_config(&cfg.sim, malicious_nodes(&cfg.sim, f), exclusion);
        let mut row = poison_row(cfg, &sim, p, f, seed)?;
        row.n_day_degradation = baseline.n_day_accuracy - row.n_day_accuracy;
        row.detection_degradation = baseline.detection_accuracy - row.detection_accuracy;
        rows.push(row);
    }
    Ok(PoisonReport {
        schema: REPORT_SCHEMA,
        fingerprint: cfg.fingerprint(),
        seed,
        baseline,
        rows,
    })
}

/// The prepared scenario holding out `class`, or the first one.
pub fn pick_scenario(mut ps: Vec<PreparedScenario>, class: Option<u32>) -> Result<PreparedScenario> {
    match class {
        None => ps.into_iter().next().ok_or(EvalError::Data(DataError::NoAttacks)),
        Some(c) => {
            let i = ps
                .iter()
                .position(|p| p.scenario.spec.zero_day_class == c)
                .ok_or(EvalError::NoScenario(c))?;
            Ok(ps.swap_remove(i))
        }
    }
}
