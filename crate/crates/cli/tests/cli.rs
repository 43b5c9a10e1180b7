use std::path::Path;
use std::process::{Command, Output};

use osfl_core::config::ExperimentConfig;

fn osfl(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_osfl"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn default_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, ExperimentConfig::default().canonical_json()).unwrap();
    p
}

#[test]
fn missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = osfl(&["simulate"], Some(&dir.path().join("nope.toml")), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(osfl(&["frobnicate"], None, dir.path()).status.code(), Some(1));
}

#[test]
fn rewindowing_flow_features_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = osfl(&["tw-sweep", "--tw", "1,10"], None, dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_scenario_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = osfl(&["simulate", "--scenario", "42"], None, dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn scenario_sweep_writes_one_report_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = osfl(&["scenario-sweep"], Some(&cfg), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for c in 0..3 {
        let report = std::fs::read_to_string(out_dir.join(format!("report-zd{c}.json"))).unwrap();
        assert!(report.contains("osfl-report/1"));
        assert!(out_dir.join(format!("ledger-zd{c}.jsonl")).exists());
    }
    assert!(out_dir.join("scenario_sweep.csv").exists());
}

#[test]
fn seed_changes_simulate_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(osfl(&["simulate", "--seed", "1"], Some(&cfg), &a).status.success());
    assert!(osfl(&["simulate", "--seed", "2"], Some(&cfg), &b).status.success());
    let read = |d: &Path| std::fs::read(d.join("ledger.jsonl")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn gen_data_then_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config(dir.path());
    let out_dir = dir.path().join("out");
    for cmd in ["gen-data", "train-ad", "train-ac", "evaluate"] {
        let out = osfl(&[cmd], Some(&cfg), &out_dir);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["flows.csv", "detector.json", "classifier.json", "evaluate.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synthetic = ExperimentConfig::load(&root.join("synthetic.toml")).unwrap();
    assert_eq!(synthetic, ExperimentConfig::default());
    ExperimentConfig::load(&root.join("packets.toml")).unwrap();
}
