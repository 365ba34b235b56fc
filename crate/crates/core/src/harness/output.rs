use super::run::ExperimentReport;
use crate::error::{Error, Result};
use crate::optim::QuasiNewtonConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Decimal text that parses back to the same `f64`: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub t: f64,
    #[serde(rename = "W2")]
    pub w2: Option<f64>,
    #[serde(rename = "SW2")]
    pub sw2: f64,
    #[serde(rename = "MMD")]
    pub mmd: f64,
}

/// Row of the drift table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub drift_mse_total: f64,
    pub drift_mse_per_component: f64,
}

/// Paths written by [`emit_tables`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmittedFiles {
    pub metrics: PathBuf,
    pub drift: PathBuf,
    pub sweep: Option<PathBuf>,
    pub dimscan: Option<PathBuf>,
    pub slices: Option<PathBuf>,
    pub report: PathBuf,
    pub manifest: PathBuf,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// SHA-256 of the config's canonical TOML text.
pub fn config_hash(report: &ExperimentReport) -> Result<String> {
    let text = report.config.to_toml()?;
    Ok(Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Writes the metrics, drift, sweep and slice CSVs, the full JSON report
/// and the run manifest into `dir`.
pub fn emit_tables(report: &ExperimentReport, dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir)?;
    let exp = report.config.experiment.name();
    let mut files = EmittedFiles {
        metrics: dir.join(format!("{exp}_metrics.csv")),
        drift: dir.join(format!("{exp}_drift.csv")),
        report: dir.join(format!("{exp}_report.json")),
        manifest: dir.join(format!("{exp}_manifest.json")),
        ..Default::default()
    };

    write_rows(
        &files.metrics,
        &["experiment", "method", "seed", "t", "W2", "SW2", "MMD"],
        report.methods.iter().flat_map(|m| {
            m.metrics.rows.iter().map(move |r| {
                vec![
                    exp.to_string(),
                    m.method.clone(),
                    m.seed.to_string(),
                    fmt_f64(r.t),
                    fmt_opt(r.w2),
                    fmt_f64(r.sw2),
                    fmt_f64(r.mmd),
                ]
            })
        }),
    )?;
    write_rows(
        &files.drift,
        &[
            "experiment",
            "method",
            "seed",
            "drift_mse_total",
            "drift_mse_per_component",
        ],
        report.methods.iter().filter_map(|m| {
            m.drift().map(|d| {
                vec![
                    exp.to_string(),
                    m.method.clone(),
                    m.seed.to_string(),
                    fmt_f64(d.total),
                    fmt_f64(d.per_component),
                ]
            })
        }),
    )?;
    if !report.sweep.is_empty() {
        let path = dir.join(format!("{exp}_sweep.csv"));
        write_rows(
            &path,
            &["param", "value", "mse_mean", "mse_std", "time_s"],
            report.sweep.iter().map(|r| {
                vec![
                    r.param.clone(),
                    fmt_f64(r.value),
                    fmt_f64(r.mse_mean),
                    fmt_f64(r.mse_std),
                    fmt_f64(r.time_s),
                ]
            }),
        )?;
        files.sweep = Some(path);
    }
    if !report.dims.is_empty() {
        let path = dir.join(format!("{exp}_dimscan.csv"));
        write_rows(
            &path,
            &[
                "d",
                "mse_total_mean",
                "mse_total_std",
                "mse_per_component_mean",
                "mse_per_component_std",
                "time_s",
                "iterations_mean",
            ],
            report.dims.iter().map(|r| {
                vec![
                    r.d.to_string(),
                    fmt_f64(r.mse_total_mean),
                    fmt_f64(r.mse_total_std),
                    fmt_f64(r.mse_per_component_mean),
                    fmt_f64(r.mse_per_component_std),
                    fmt_f64(r.time_s),
                    fmt_f64(r.iterations_mean),
                ]
            }),
        )?;
        files.dimscan = Some(path);
    }
    if report.methods.iter().any(|m| !m.slices.is_empty()) {
        let path = dir.join(format!("{exp}_drift_slices.csv"));
        write_rows(
            &path,
            &[
                "experiment",
                "method",
                "seed",
                "t",
                "x1",
                "component",
                "u_hat",
                "u_true",
            ],
            report.methods.iter().flat_map(|m| {
                m.slices.iter().map(move |s| {
                    vec![
                        exp.to_string(),
                        m.method.clone(),
                        m.seed.to_string(),
                        fmt_f64(s.t),
                        fmt_f64(s.x1),
                        s.component.to_string(),
                        fmt_f64(s.u_hat),
                        fmt_f64(s.u_true),
                    ]
                })
            }),
        )?;
        files.slices = Some(path);
    }

    std::fs::write(&files.report, serde_json::to_string_pretty(report)?)?;
    let manifest = manifest(report, &files)?;
    std::fs::write(&files.manifest, serde_json::to_string_pretty(&manifest)?)?;
    Ok(files)
}

/// Run manifest: config and its hash, seeds, library version, conventions,
/// environment fingerprint and loss traces.
pub fn manifest(report: &ExperimentReport, files: &EmittedFiles) -> Result<serde_json::Value> {
    let cfg = &report.config;
    let qn = QuasiNewtonConfig::default();
    let sinkhorn = cfg
        .baselines
        .wot
        .as_ref()
        .map(|w| &w.sinkhorn)
        .cloned()
        .unwrap_or_default();
    Ok(json!({
        "schema": "alltimeot-manifest/1",
        "library": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "experiment": cfg.experiment.name(),
        "config_sha256": config_hash(report)?,
        "config_toml": cfg.to_toml()?,
        "seeds": report.seeds,
        "complete": report.complete,
        "failures": report.failures,
        "wall_s": report.wall_s,
        "conventions": {
            "evaluation_times": cfg.evaluation.times,
            "drift_evaluation": cfg.evaluation.drift,
            "slice_times": format!("{:?}", cfg.sampling.time_mode),
            "grid_slice_times": "midpoints (k + 1/2) T / M",
            "sliced_w2_projections": cfg.evaluation.projections,
            "mmd": { "estimator": "biased V-statistic", "bandwidth": cfg.evaluation.mmd_bandwidth,
                     "max_points": cfg.evaluation.mmd_max_points },
            "w2_1d": "sorted samples; larger sample reduced to the smaller size by quantile interpolation at (i + 1/2)/n",
            "sinkhorn": { "epsilon": sinkhorn.epsilon, "epsilon_scale_of_mean_cost": sinkhorn.epsilon_scale,
                          "tol": sinkhorn.tol, "max_iter": sinkhorn.max_iter },
            "wot_off_support": "nearest source particle of the active interval",
            "wot_snapshot_times": "equally spaced on [0, T] including both ends",
            "mmot_selection": "grid cell with the lowest drift MSE against the true drift",
            "quasi_newton_defaults": qn,
            "simulation": { "particles": cfg.evaluation.particles, "steps": cfg.evaluation.steps,
                            "reference_particles": cfg.evaluation.reference_particles },
            "float_format": "17 significant digits",
        },
        "environment": {
            "os": std::env::consts::OS,
            "arch": std::env::consts::ARCH,
            "available_parallelism": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            "parallel_feature": cfg!(feature = "parallel"),
            "execution": cfg.loss.execution,
            "jobs": cfg.jobs,
            "debug_assertions": cfg!(debug_assertions),
        },
        "loss_traces": report.methods.iter().filter_map(|m| m.fit.as_ref().map(|f| json!({
            "method": m.method, "seed": m.seed, "trace": f.trace,
        }))).collect::<Vec<_>>(),
        "files": files,
    }))
}

/// Parses a metrics table written by [`emit_tables`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Parses a drift table written by [`emit_tables`].
pub fn read_drift_csv(path: &Path) -> Result<Vec<DriftRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
