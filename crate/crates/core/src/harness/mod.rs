//! Experiment orchestration: configs with per-suite defaults, seeded runs
//! of the all-time fits and the comparison methods, parameter sweeps, and
//! CSV/JSON emission.
//!
//! Seeds: each seed in the config is a master seed. Batches, model
//! initializations, simulation noise, reference samples and evaluation
//! draws each come from their own derived stream (see [`crate::rng`]), so a
//! `(config, seed)` pair fixes the whole report.

mod config;
mod output;
mod run;
mod sweeps;

pub use config::{
    BaselineConfig, DimScanConfig, EvaluationConfig, ExperimentConfig, FlowMatchingSetup,
    MethodConfig, MmotSetup, OptimizerConfig, OutputConfig, SamplingConfig, Suite, SweepConfig,
    WotSetup,
};
pub use output::{
    config_hash, emit_tables, fmt_f64, manifest, read_drift_csv, read_metrics_csv, DriftRecord,
    EmittedFiles, MetricsRecord,
};
pub use run::{
    draw_batches, fit_method, run_experiment, ExperimentReport, FitSummary, MethodReport,
    RestartSummary, SliceRow, StageFailure, Timings,
};
pub use sweeps::{
    dimension_config, realization_seed, run_dimension_scan, run_sensitivity, DimRow, SweepRow,
};
