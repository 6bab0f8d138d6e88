//! Retrieval metrics, chance baselines and the experiment protocols.

mod experiment;
mod metrics;
mod report;

pub use experiment::{
    resolution_sweep, run_experiment1, run_experiment2, Experiment, ExperimentConfig, ExperimentResult,
    FoldArtifacts, FoldResult, MetricStat, Protocol, SweepRow, DEFAULT_SWEEP_MPP,
};
pub use experiment::fingerprint_of;
pub use metrics::{compute_metrics, mean_std, random_baseline, random_prediction, MetricsReport, RandomBaseline};
pub use report::{
    format_experiment_csv, format_experiment_table, format_sweep_csv, format_sweep_table, write_experiment_report,
    write_sweep_report,
};
