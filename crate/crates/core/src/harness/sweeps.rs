use super::config::{ExperimentConfig, OptimizerConfig};
use super::run::{
    draw_batches, fit_method, EvalContext, Failures, MethodReport, StageFailure, Timings,
};
use crate::error::{Error, Result};
use crate::flows::{FlowKind, MarginalFlow};
use crate::metrics::DriftEvaluation;
use crate::models::{FeatureSet, ModelSpec};
use crate::par::map_indexed;
use crate::rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One cell of the one-at-a-time sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    /// Mean optimizer wall-clock per realization.
    pub time_s: f64,
}

/// One dimension of the scaling scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimRow {
    pub d: usize,
    pub mse_total_mean: f64,
    pub mse_total_std: f64,
    pub mse_per_component_mean: f64,
    pub mse_per_component_std: f64,
    pub time_s: f64,
    pub iterations_mean: f64,
}

/// Master seed of realization `k`; shared by every cell so that cells
/// differ only in the swept parameter.
pub fn realization_seed(master: u64, k: usize) -> u64 {
    rng::derive_seed(master, &[k as u64])
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fits the first method of `cfg` on realization `seed` and measures its
/// drift error. Returns the report and the optimizer wall-clock.
fn fit_and_score(
    cfg: &ExperimentConfig,
    label: &str,
    seed: u64,
    failures: &mut Failures,
) -> Option<(MethodReport, f64, usize)> {
    let method = cfg.methods.first()?;
    let batches = failures.record("sampling", label, seed, draw_batches(cfg, &cfg.flow, seed))?;
    let t0 = Instant::now();
    let (model, fit) = failures.record(
        "optimize",
        label,
        seed,
        fit_method(cfg, method, 0, &batches, seed),
    )?;
    let fit_s = t0.elapsed().as_secs_f64();
    let ctx = failures.record(
        "references",
        label,
        seed,
        EvalContext::new(cfg, &cfg.flow, seed),
    )?;
    let metrics = failures.record("metrics", label, seed, ctx.metrics(&model, None, 0))?;
    let iterations = fit.iterations;
    let report = MethodReport {
        method: label.into(),
        seed,
        model: Some(method.model.label()),
        fit: Some(fit),
        metrics,
        timings: Timings {
            fit_s,
            ..Default::default()
        },
        slices: Vec::new(),
        notes: Vec::new(),
    };
    Some((report, fit_s, iterations))
}

type Cell = (String, f64, ExperimentConfig);

/// Sweeps `M`, `N` and `λ` one at a time around the base config, with
/// `k_seed` realizations per cell. Cell failures are recorded and the cell
/// is reported with the realizations that succeeded.
pub fn run_sensitivity(
    config: &ExperimentConfig,
) -> Result<(Vec<SweepRow>, Vec<MethodReport>, Vec<StageFailure>)> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sensitivity run needs a [sweep] section".into()))?;
    if config.methods.is_empty() || sweep.k_seed == 0 {
        return Err(Error::Config(
            "sensitivity run needs a method and k_seed ≥ 1".into(),
        ));
    }
    let mut cells: Vec<Cell> = Vec::new();
    for &m in &sweep.m_values {
        let mut c = config.clone();
        c.sampling.m = m;
        cells.push(("M".into(), m as f64, c));
    }
    for &n in &sweep.n_values {
        let mut c = config.clone();
        c.sampling.n = n;
        cells.push(("N".into(), n as f64, c));
    }
    for &lambda in &sweep.lambda_values {
        let mut c = config.clone();
        c.loss.lambda = lambda;
        cells.push(("lambda".into(), lambda, c));
    }
    let master = config.seeds[0];
    let results = map_indexed(cells.len(), config.jobs, |i| {
        let (param, value, cfg) = &cells[i];
        let label = format!("{param}={value}");
        let mut failures = Failures::default();
        let runs: Vec<_> = (0..sweep.k_seed)
            .filter_map(|k| fit_and_score(cfg, &label, realization_seed(master, k), &mut failures))
            .collect();
        (runs, failures)
    });
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for ((param, value, _), (runs, f)) in cells.iter().zip(results) {
        failures.extend(f.0);
        let mse: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.0.drift().map(|d| d.total))
            .collect();
        if !mse.is_empty() {
            let (mse_mean, mse_std) = mean_std(&mse);
            let time_s = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
            rows.push(SweepRow {
                param: param.clone(),
                value: *value,
                mse_mean,
                mse_std,
                time_s,
            });
        }
        reports.extend(runs.into_iter().map(|r| r.0));
    }
    Ok((rows, reports, failures))
}

/// Config for dimension `d`: the rescaled translation flow, an affine model
/// and a Monte-Carlo drift error over `[−r, r]ᵈ`.
pub fn dimension_config(config: &ExperimentConfig, d: usize, half_width: f64) -> ExperimentConfig {
    let mut c = config.clone();
    c.flow = MarginalFlow {
        kind: FlowKind::GaussTranslateNd { dim: d },
        horizon: config.flow.horizon,
    };
    let optimizer = config
        .methods
        .first()
        .map(|m| m.optimizer.clone())
        .unwrap_or(OptimizerConfig::QuasiNewton(Default::default()));
    let name = config
        .methods
        .first()
        .map_or("all_time".to_string(), |m| m.name.clone());
    c.methods = vec![super::config::MethodConfig {
        name,
        model: ModelSpec::Dictionary {
            features: FeatureSet::AffineD { dim: d },
        },
        optimizer,
    }];
    let t_range = (0.0, config.flow.horizon);
    let (n_t, n_points) = match &config.evaluation.drift {
        Some(DriftEvaluation::MonteCarlo { n_t, n_points, .. }) => (*n_t, *n_points),
        _ => (15, 2000),
    };
    c.evaluation.drift = Some(DriftEvaluation::MonteCarlo {
        t_range,
        x_ranges: vec![(-half_width, half_width); d],
        n_t,
        n_points,
    });
    c.evaluation.particles = 0;
    c
}

/// Fits `affine_d` for every `d` in the scan and reports total and
/// per-component Monte-Carlo drift error together with optimizer time.
pub fn run_dimension_scan(
    config: &ExperimentConfig,
) -> Result<(Vec<DimRow>, Vec<MethodReport>, Vec<StageFailure>)> {
    let scan = config
        .dimscan
        .as_ref()
        .ok_or_else(|| Error::Config("dimension scan needs a [dimscan] section".into()))?;
    if scan.dims.is_empty() || scan.k_seed == 0 || scan.dims.contains(&0) {
        return Err(Error::Config(
            "dimension scan needs dims ≥ 1 and k_seed ≥ 1".into(),
        ));
    }
    let master = config.seeds[0];
    let cells: Vec<ExperimentConfig> = scan
        .dims
        .iter()
        .map(|&d| dimension_config(config, d, scan.box_half_width))
        .collect();
    let results = map_indexed(cells.len(), config.jobs, |i| {
        let label = format!("d={}", scan.dims[i]);
        let mut failures = Failures::default();
        let runs: Vec<_> = (0..scan.k_seed)
            .filter_map(|k| {
                fit_and_score(
                    &cells[i],
                    &label,
                    realization_seed(master, k),
                    &mut failures,
                )
            })
            .collect();
        (runs, failures)
    });
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (&d, (runs, f)) in scan.dims.iter().zip(results) {
        failures.extend(f.0);
        let total: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.0.drift().map(|m| m.total))
            .collect();
        let per: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.0.drift().map(|m| m.per_component))
            .collect();
        if !total.is_empty() {
            let (mse_total_mean, mse_total_std) = mean_std(&total);
            let (mse_per_component_mean, mse_per_component_std) = mean_std(&per);
            let n = runs.len() as f64;
            rows.push(DimRow {
                d,
                mse_total_mean,
                mse_total_std,
                mse_per_component_mean,
                mse_per_component_std,
                time_s: runs.iter().map(|r| r.1).sum::<f64>() / n,
                iterations_mean: runs.iter().map(|r| r.2 as f64).sum::<f64>() / n,
            });
        }
        reports.extend(runs.into_iter().map(|r| r.0));
    }
    Ok((rows, reports, failures))
}
