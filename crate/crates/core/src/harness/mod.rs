//! JSON experiment configs, orchestration and report tooling.

mod config;
mod report;
mod run;

pub use config::{
    AnalyticSpec, DataSource, DatasetSpec, DrlSpec, ExperimentConfig, ExperimentScheme, MixSpec,
    ModelSpec, TrainingSpec, SCHEMES,
};
pub use report::{
    compare, fmt_f64, read_metrics, summarize, write_exchanges, write_metrics, write_residuals,
    Comparison, MetricsRow, RoundDelta, RoundSummary, ThresholdRatio, DEFAULT_THRESHOLDS,
    EXCHANGE_HEADER, METRICS_HEADER, RESIDUAL_HEADER,
};
pub use run::{
    load_dataset, resolve_output_dir, run_experiment, version, Manifest, RunSummary, OUT_DIR_ENV,
};
