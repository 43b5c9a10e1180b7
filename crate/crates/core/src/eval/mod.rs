//! Metrics, reports and experiment drivers.

mod metrics;
mod pipeline;
mod report;

pub use metrics::{
    auroc, compute_metrics, per_class_counts, tnr_at_tpr, ConfusionCounts, MetricError, ThresholdMetrics,
};
pub use pipeline::{
    conf_threshold, detector_init, dp_sweep, evaluate_closed_set, evaluate_detector, evaluate_zero_day, fl_classifier,
    fl_detector, load_flows, malicious_nodes, pick_scenario, poison_config, poison_test, prepare_scenarios,
    run_scenario, run_scenario_with, sim_data, subsample_flows, sweep_time_windows, ChainSummary, ClassRow,
    ClosedSetSection, DetectionSection, DpRow, DpSummary, DpSweepReport, EvalError, PoisonReport, PoisonRow,
    PreparedScenario, ScenarioReport, TwRow, TwSweepReport, ZeroDaySection,
};
pub use report::{write_atomic, write_csv, write_json, REPORT_SCHEMA};
