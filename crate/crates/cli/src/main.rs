use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use osfl_core::classifier::{train_classifier, McddModel};
use osfl_core::config::{ConfigError, DataSource, ExperimentConfig};
use osfl_core::data::{write_flow_csv, ClassDictionary, DataError, FlowFeatureVector, Label, TimeWindow};
use osfl_core::derive_seed;
use osfl_core::detector::{train_detector, DetectorModel};
use osfl_core::eval::{self, EvalError, PreparedScenario, REPORT_SCHEMA};

#[derive(Parser)]
#[command(name = "osfl", version, about = "Open-set federated intrusion detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(clap::Args)]
struct Opts {
    /// Experiment config (TOML, or JSON by extension). Built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Attack id held out as the 0-day class.
    #[arg(long, global = true)]
    scenario: Option<u32>,
    /// Single privacy budget for `dp-sweep` instead of the configured list.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Share of workers that sign-flip in `poison-test`.
    #[arg(long = "malicious-frac", global = true)]
    malicious_frac: Option<f64>,
    /// Exclusion and gain-filtered aggregation in `poison-test`.
    #[arg(long, global = true, value_enum)]
    exclusion: Option<Switch>,
    /// Comma-separated time windows in seconds, or `default`.
    #[arg(long, global = true, value_delimiter = ',')]
    tw: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate flows and write them with the scenario splits.
    GenData,
    /// Train and calibrate the detector centrally on one scenario.
    TrainAd,
    /// Train and threshold the classifier centrally on one scenario.
    TrainAc,
    /// Federated training of both models on the simulated chain.
    Simulate,
    /// Score saved models from `train-ad` and `train-ac` on the test split.
    Evaluate,
    /// `simulate` for every 0-day scenario.
    ScenarioSweep,
    /// Detector and classifier accuracy per time window.
    TwSweep,
    /// Detector accuracy without DP and per epsilon, over the configured seeds.
    DpSweep,
    /// Sign-flip poisoning against a clean baseline.
    PoisonTest,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::CannotRewindow(_) | EvalError::NoScenario(_) | EvalError::NoNDay(_) => {
                Failure::Usage(e.to_string())
            }
            EvalError::Data(DataError::InvalidWindow(_)) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    opts: Opts,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.opts.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.opts.seed {
        cfg.seed = s;
    }
    if matches!(cli.opts.epsilon, Some(e) if !(e > 0.0 && e.is_finite())) {
        return Err(Failure::Usage("--epsilon must be positive".into()));
    }
    if matches!(cli.opts.malicious_frac, Some(f) if !(0.0..=1.0).contains(&f)) {
        return Err(Failure::Usage("--malicious-frac must lie in [0, 1]".into()));
    }
    let ctx = Ctx {
        seed: cfg.seed,
        cfg,
        out: cli.opts.out.clone(),
        opts: cli.opts,
    };
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::TrainAd => train_ad(&ctx),
        Command::TrainAc => train_ac(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::Evaluate => evaluate(&ctx),
        Command::ScenarioSweep => scenario_sweep(&ctx),
        Command::TwSweep => tw_sweep(&ctx),
        Command::DpSweep => dp_sweep(&ctx),
        Command::PoisonTest => poison_test(&ctx),
    }
}

impl Ctx {
    fn windows(&self) -> Result<Vec<TimeWindow>, Failure> {
        let raw = self
            .opts
            .tw
            .clone()
            .unwrap_or_else(|| self.cfg.sweeps.time_windows.clone());
        raw.iter()
            .map(|s| TimeWindow::parse(s).map_err(|e| Failure::Usage(format!("--tw {s}: {e}"))))
            .collect()
    }

    fn flows(&self) -> Result<Vec<FlowFeatureVector>, Failure> {
        let tw = match &self.opts.tw {
            Some(_) => self.windows()?.first().copied(),
            None => None,
        };
        Ok(eval::load_flows(&self.cfg, tw, self.seed)?)
    }

    fn scenario(&self) -> Result<PreparedScenario, Failure> {
        let flows = self.flows()?;
        let ps = eval::prepare_scenarios(&self.cfg, &flows, self.seed)?;
        Ok(eval::pick_scenario(ps, self.opts.scenario)?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let p = self.path(name);
        eval::write_json(&p, value).map_err(|e| runtime(format!("{}: {e}", p.display())))
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
        let p = self.path(name);
        eval::write_csv(&p, header, rows).map_err(|e| runtime(format!("{}: {e}", p.display())))
    }
}

fn dictionary(cfg: &ExperimentConfig, flows: &[FlowFeatureVector]) -> ClassDictionary {
    match &cfg.data {
        DataSource::PacketCsv { dictionary, .. } | DataSource::FlowCsv { dictionary, .. } => dictionary.clone(),
        _ => {
            let max = flows.iter().filter_map(|f| f.label.attack_id()).max();
            let attacks: Vec<String> = max.map_or(Vec::new(), |m| (0..=m).map(|i| format!("attack{i}")).collect());
            ClassDictionary {
                benign: vec!["benign".into()],
                attacks,
            }
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

#[derive(Serialize)]
struct GenDataReport<'a> {
    schema: &'static str,
    fingerprint: String,
    seed: u64,
    n_flows: usize,
    scenarios: Vec<&'a osfl_core::data::Scenario>,
}

fn gen_data(ctx: &Ctx) -> Result<(), Failure> {
    let flows = ctx.flows()?;
    let ps = eval::prepare_scenarios(&ctx.cfg, &flows, ctx.seed)?;
    let dict = dictionary(&ctx.cfg, &flows);
    let mut buf = Vec::new();
    write_flow_csv(&mut buf, &flows, &dict).map_err(runtime)?;
    let p = ctx.path("flows.csv");
    eval::write_atomic(&p, &buf).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    ctx.json(
        "scenarios.json",
        &GenDataReport {
            schema: REPORT_SCHEMA,
            fingerprint: ctx.cfg.fingerprint(),
            seed: ctx.seed,
            n_flows: flows.len(),
            scenarios: ps.iter().map(|p| &p.scenario).collect(),
        },
    )?;
    println!("{} flows, {} scenarios -> {}", flows.len(), ps.len(), ctx.out.display());
    Ok(())
}

fn test_pairs(p: &PreparedScenario) -> Vec<(&[f64], bool)> {
    p.scenario
        .test
        .iter()
        .map(|&i| (p.flows[i].features.as_slice(), !p.flows[i].label.is_benign()))
        .collect()
}

fn open_pairs(p: &PreparedScenario) -> Vec<(&[f64], bool)> {
    let zd = Label::Attack(p.scenario.spec.zero_day_class);
    p.scenario
        .test
        .iter()
        .filter(|&&i| !p.flows[i].label.is_benign())
        .map(|&i| (p.flows[i].features.as_slice(), p.flows[i].label == zd))
        .collect()
}

#[derive(Serialize)]
struct TrainAdReport {
    schema: &'static str,
    fingerprint: String,
    seed: u64,
    zero_day_class: u32,
    loss_history: Vec<f64>,
    detection: eval::DetectionSection,
}

fn train_ad(ctx: &Ctx) -> Result<(), Failure> {
    let p = ctx.scenario()?;
    let sc = &p.scenario;
    let train: Vec<FlowFeatureVector> = sc.ad_train.iter().map(|&i| p.flows[i].clone()).collect();
    let dim = train
        .first()
        .map(|f| f.features.len())
        .ok_or_else(|| runtime("no benign training flows"))?;
    let init = eval::detector_init(ctx.cfg.detector.hidden.as_deref(), dim, ctx.seed)?;
    let mut tc = ctx.cfg.detector.train.clone();
    tc.seed = derive_seed(ctx.seed, "ad-train", 0);
    let out = train_detector(&init, &train, &tc).map_err(runtime)?;
    let mut model = DetectorModel::new(out.params, ctx.cfg.detector.mad_multiplier, "osfl").map_err(runtime)?;
    let val = p.features(&sc.ad_val);
    model.calibrate(&val).map_err(runtime)?;
    model.save(&ctx.path("detector.json")).map_err(runtime)?;
    let detection = eval::evaluate_detector(&model.params, &val, model.mad_multiplier, &test_pairs(&p))?;
    println!(
        "detector: accuracy {:.4} f1 {:.4} threshold {:.6}",
        detection.metrics.accuracy, detection.metrics.f1, detection.threshold
    );
    ctx.json(
        "train-ad.json",
        &TrainAdReport {
            schema: REPORT_SCHEMA,
            fingerprint: ctx.cfg.fingerprint(),
            seed: ctx.seed,
            zero_day_class: sc.spec.zero_day_class,
            loss_history: out.history,
            detection,
        },
    )
}

#[derive(Serialize)]
struct TrainAcReport {
    schema: &'static str,
    fingerprint: String,
    seed: u64,
    zero_day_class: u32,
    loss_history: Vec<f64>,
    n_day: eval::ClosedSetSection,
    zero_day: eval::ZeroDaySection,
}

fn train_ac(ctx: &Ctx) -> Result<(), Failure> {
    let p = ctx.scenario()?;
    let sc = &p.scenario;
    if sc.ac_skipped() {
        return Err(EvalError::NoNDay(sc.spec.zero_day_class).into());
    }
    let train: Vec<FlowFeatureVector> = sc.ac_train.iter().map(|&i| p.flows[i].clone()).collect();
    let mut mcdd = ctx.cfg.classifier.clone();
    mcdd.init_seed = derive_seed(ctx.seed, "ac-init", 0);
    mcdd.train.seed = derive_seed(ctx.seed, "ac-train", 0);
    let out = train_classifier(&train, &mcdd).map_err(runtime)?;
    out.model.save(&ctx.path("classifier.json")).map_err(runtime)?;
    let (n_day, zero_day) = score_classifier(&out.model, &p)?;
    println!(
        "classifier: n-day accuracy {:.4}, 0-day recall {:.4}",
        n_day.accuracy, zero_day.metrics.tpr
    );
    ctx.json(
        "train-ac.json",
        &TrainAcReport {
            schema: REPORT_SCHEMA,
            fingerprint: ctx.cfg.fingerprint(),
            seed: ctx.seed,
            zero_day_class: sc.spec.zero_day_class,
            loss_history: out.history,
            n_day,
            zero_day,
        },
    )
}

fn score_classifier(
    m: &McddModel,
    p: &PreparedScenario,
) -> Result<(eval::ClosedSetSection, eval::ZeroDaySection), Failure> {
    let (nx, ny) = p.attack_set(&p.scenario.test);
    let n_day = eval::evaluate_closed_set(m, &nx, &ny)?;
    let cs = m
        .conf_threshold
        .ok_or_else(|| runtime("classifier has no confidence threshold"))?;
    let zero_day = eval::evaluate_zero_day(m, cs, &open_pairs(p), p.scenario.spec.zero_day_class)?;
    Ok((n_day, zero_day))
}

#[derive(Serialize)]
struct EvaluateReport {
    schema: &'static str,
    fingerprint: String,
    seed: u64,
    zero_day_class: u32,
    detection: eval::DetectionSection,
    n_day: eval::ClosedSetSection,
    zero_day: eval::ZeroDaySection,
}

fn evaluate(ctx: &Ctx) -> Result<(), Failure> {
    let p = ctx.scenario()?;
    let ad = DetectorModel::load(&ctx.path("detector.json")).map_err(runtime)?;
    let ac = McddModel::load(&ctx.path("classifier.json")).map_err(runtime)?;
    if ac.classes != p.classes {
        return Err(Failure::Usage(format!(
            "classifier knows classes {:?}, scenario has {:?}",
            ac.classes, p.classes
        )));
    }
    let threshold = ad.threshold.ok_or_else(|| runtime("detector is not calibrated"))?;
    let mut detection = eval::evaluate_detector(
        &ad.params,
        &p.features(&p.scenario.ad_val),
        ad.mad_multiplier,
        &test_pairs(&p),
    )?;
    detection = rethreshold(detection, threshold);
    let (n_day, zero_day) = score_classifier(&ac, &p)?;
    println!(
        "detection accuracy {:.4}, n-day accuracy {:.4}, 0-day recall {:.4}",
        detection.metrics.accuracy, n_day.accuracy, zero_day.metrics.tpr
    );
    ctx.json(
        "evaluate.json",
        &EvaluateReport {
            schema: REPORT_SCHEMA,
            fingerprint: ctx.cfg.fingerprint(),
            seed: ctx.seed,
            zero_day_class: p.scenario.spec.zero_day_class,
            detection,
            n_day,
            zero_day,
        },
    )
}

/// Recounts with the stored threshold rather than a fresh calibration.
fn rethreshold(mut d: eval::DetectionSection, threshold: f64) -> eval::DetectionSection {
    d.threshold = threshold;
    d.counts = eval::ConfusionCounts::tally(d.scores.iter().map(|(r, a)| (*r > threshold, *a)));
    d.metrics = eval::compute_metrics(&d.counts);
    d
}

fn export_ledger(ctx: &Ctx, name: &str, o: &osfl_core::SimOutcome) -> Result<(), Failure> {
    let mut buf = Vec::new();
    o.ledger.export_jsonl(&mut buf).map_err(runtime)?;
    let p = ctx.path(name);
    eval::write_atomic(&p, &buf).map_err(|e| runtime(format!("{}: {e}", p.display())))
}

fn simulate(ctx: &Ctx) -> Result<(), Failure> {
    let p = ctx.scenario()?;
    let (report, outcome) = eval::run_scenario(&ctx.cfg, &p, ctx.seed)?;
    export_ledger(ctx, "ledger.jsonl", &outcome)?;
    ctx.json("report.json", &report)?;
    println!(
        "0-day class {}: {} blocks, detection accuracy {:.4}, n-day accuracy {:.4}, 0-day AUROC {}",
        report.zero_day_class,
        report.chain.height,
        report.detection.metrics.accuracy,
        report.n_day.accuracy,
        opt(report.zero_day.auroc)
    );
    Ok(())
}

fn scenario_sweep(ctx: &Ctx) -> Result<(), Failure> {
    let flows = ctx.flows()?;
    let ps = eval::prepare_scenarios(&ctx.cfg, &flows, ctx.seed)?;
    let mut rows = Vec::new();
    for p in ps.iter().filter(|p| !p.scenario.ac_skipped()) {
        let zd = p.scenario.spec.zero_day_class;
        let (r, o) = eval::run_scenario(&ctx.cfg, p, ctx.seed)?;
        export_ledger(ctx, &format!("ledger-zd{zd}.jsonl"), &o)?;
        ctx.json(&format!("report-zd{zd}.json"), &r)?;
        rows.push(vec![
            zd.to_string(),
            r.partition.to_string(),
            r.chain.height.to_string(),
            format!("{}", r.detection.metrics.accuracy),
            format!("{}", r.detection.metrics.f1),
            opt(r.detection.auroc),
            format!("{}", r.n_day.accuracy),
            format!("{}", r.n_day.macro_f1),
            format!("{}", r.zero_day.metrics.tpr),
            opt(r.zero_day.auroc),
            opt(r.zero_day.tnr85),
        ]);
        println!(
            "0-day class {zd}: detection accuracy {:.4}, n-day accuracy {:.4}, 0-day AUROC {}",
            r.detection.metrics.accuracy,
            r.n_day.accuracy,
            opt(r.zero_day.auroc)
        );
    }
    ctx.csv(
        "scenario_sweep.csv",
        &[
            "zero_day_class",
            "partition",
            "blocks",
            "ad_accuracy",
            "ad_f1",
            "ad_auroc",
            "nday_accuracy",
            "nday_macro_f1",
            "zeroday_recall",
            "zeroday_auroc",
            "zeroday_tnr85",
        ],
        &rows,
    )
}

fn tw_sweep(ctx: &Ctx) -> Result<(), Failure> {
    let r = eval::sweep_time_windows(&ctx.cfg, &ctx.windows()?, ctx.seed)?;
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|x| {
            vec![
                x.time_window.clone(),
                x.n_flows.to_string(),
                format!("{}", x.detection_accuracy),
                format!("{}", x.detection_f1),
                format!("{}", x.n_day_accuracy),
                format!("{}", x.n_day_macro_f1),
            ]
        })
        .collect();
    for x in &r.rows {
        println!(
            "tw {}: detection accuracy {:.4} f1 {:.4}",
            x.time_window, x.detection_accuracy, x.detection_f1
        );
    }
    ctx.json("tw_sweep.json", &r)?;
    ctx.csv(
        "tw_sweep.csv",
        &[
            "time_window",
            "flows",
            "ad_accuracy",
            "ad_f1",
            "nday_accuracy",
            "nday_macro_f1",
        ],
        &rows,
    )
}

fn dp_sweep(ctx: &Ctx) -> Result<(), Failure> {
    let p = ctx.scenario()?;
    let eps = match ctx.opts.epsilon {
        Some(e) => vec![e],
        None => ctx.cfg.sweeps.epsilons.clone(),
    };
    let r = eval::dp_sweep(&ctx.cfg, &p, &eps, &ctx.cfg.sweeps.dp_seeds)?;
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|x| {
            vec![
                opt(x.epsilon),
                x.seed.to_string(),
                opt(x.sigma),
                format!("{}", x.detection.metrics.accuracy),
                format!("{}", x.detection.metrics.f1),
            ]
        })
        .collect();
    for s in &r.summary {
        let label = s
            .epsilon
            .map_or_else(|| "no DP".to_string(), |e| format!("epsilon {e}"));
        println!("{label}: mean accuracy {:.4}", s.mean_accuracy);
    }
    ctx.json("dp_sweep.json", &r)?;
    ctx.csv(
        "dp_sweep.csv",
        &["epsilon", "seed", "sigma", "ad_accuracy", "ad_f1"],
        &rows,
    )
}

fn poison_test(ctx: &Ctx) -> Result<(), Failure> {
    let p = ctx.scenario()?;
    let fracs = match ctx.opts.malicious_frac {
        Some(f) => vec![f],
        None => ctx.cfg.sweeps.malicious_fracs.clone(),
    };
    let exclusion = !matches!(ctx.opts.exclusion, Some(Switch::Off));
    let r = eval::poison_test(&ctx.cfg, &p, &fracs, exclusion, ctx.seed)?;
    let row = |x: &eval::PoisonRow| {
        vec![
            format!("{}", x.malicious_frac),
            x.exclusion.to_string(),
            format!("{}", x.n_day_accuracy),
            format!("{}", x.n_day_degradation),
            format!("{}", x.detection_accuracy),
            format!("{}", x.detection_degradation),
            x.rounds.to_string(),
        ]
    };
    let rows: Vec<Vec<String>> = std::iter::once(&r.baseline).chain(&r.rows).map(row).collect();
    for x in &r.rows {
        println!(
            "malicious {:.2} exclusion {}: n-day accuracy {:.4} (clean {:.4}), excluded {:?}",
            x.malicious_frac,
            if x.exclusion { "on" } else { "off" },
            x.n_day_accuracy,
            r.baseline.n_day_accuracy,
            x.excluded
        );
    }
    ctx.json("poison.json", &r)?;
    ctx.csv(
        "poison.csv",
        &[
            "malicious_frac",
            "exclusion",
            "nday_accuracy",
            "nday_degradation",
            "ad_accuracy",
            "ad_degradation",
            "rounds",
        ],
        &rows,
    )
}
