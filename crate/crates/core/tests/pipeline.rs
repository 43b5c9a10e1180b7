use osfl_core::chain::{run_training, Identity, Keyring, Ledger, NodeId, NodeKind};
use osfl_core::config::ExperimentConfig;
use osfl_core::eval::{load_flows, prepare_scenarios, run_scenario, sim_data};

fn setup() -> (ExperimentConfig, Vec<osfl_core::eval::PreparedScenario>) {
    let cfg = ExperimentConfig::default();
    let flows = load_flows(&cfg, None, cfg.seed).unwrap();
    let ps = prepare_scenarios(&cfg, &flows, cfg.seed).unwrap();
    (cfg, ps)
}

#[test]
fn one_scenario_per_attack_class_and_zero_day_unseen() {
    let (_, ps) = setup();
    assert_eq!(ps.len(), 3);
    for p in &ps {
        let zd = p.scenario.spec.zero_day_class;
        assert!(!p.scenario.spec.n_day_classes.contains(&zd));
        for i in p.scenario.training_manifest() {
            assert_ne!(p.flows[i].label, osfl_core::Label::Attack(zd));
        }
    }
}

#[test]
fn ledger_round_trips_and_verifies() {
    let (cfg, ps) = setup();
    let seed = 5;
    let data = sim_data(&ps[0], &cfg.sim, cfg.partition, seed).unwrap();
    let out = run_training(&cfg.sim, &data, seed).unwrap();
    let mut keyring = Keyring::new();
    for m in 0..cfg.sim.topology.n_mec as u32 {
        keyring
            .register(&Identity::generate(
                NodeId(m),
                NodeKind::MecActive,
                cfg.sim.scheme,
                seed,
            ))
            .unwrap();
    }
    out.ledger.verify(&keyring).unwrap();
    let mut buf = Vec::new();
    out.ledger.export_jsonl(&mut buf).unwrap();
    let back = Ledger::import_jsonl(buf.as_slice()).unwrap();
    back.verify(&keyring).unwrap();
    assert_eq!(back.blocks(), out.ledger.blocks());
    assert!(out.ledger.height() as usize >= cfg.sim.min_rounds as usize);
}

#[test]
fn default_scenarios_learn() {
    let (cfg, ps) = setup();
    for p in &ps {
        let (report, _) = run_scenario(&cfg, p, cfg.seed).unwrap();
        assert!(
            report.detection.metrics.accuracy > 0.9,
            "{}",
            report.detection.metrics.accuracy
        );
        assert!(report.n_day.accuracy > 0.9, "{}", report.n_day.accuracy);
        assert_eq!(report.zero_day_in_training, 0);
    }
}
