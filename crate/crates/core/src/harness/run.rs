use super::config::{ExperimentConfig, MethodConfig, OptimizerConfig, Suite};
use super::sweeps::{run_dimension_scan, run_sensitivity, DimRow, SweepRow};
use crate::baselines::{flow_matching_fit, mmot_affine_fit, wot_drift, Snapshot};
use crate::error::{Error, Result};
use crate::flows::MarginalFlow;
use crate::kernel::RadialKernel;
use crate::metrics::{drift_grid_mse, marginal_row, DriftMse, MetricReport};
use crate::models::{DriftModel, Model, VelocityField, ZeroDrift};
use crate::optim::{minimize_adaptive, minimize_qn_restarts};
use crate::par::map_indexed;
use crate::penalty::{draw_batch, ensemble_loss, loss_and_gradient, SampleBatch};
use crate::points::Points;
use crate::rng::{self, stage};
use crate::simulate::{simulate_ode, simulate_sde, SimulationConfig, Snapshots};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One optimizer run from one initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub stop: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub params: Vec<f64>,
    pub loss: f64,
    /// Quasi-Newton iterations of the chosen restart, or Adam steps.
    pub iterations: usize,
    pub restarts: Vec<RestartSummary>,
    /// Loss trace of the chosen run.
    pub trace: Vec<f64>,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fit_s: f64,
    pub simulate_s: f64,
    pub metrics_s: f64,
}

/// Learned vs true drift along the first axis at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub t: f64,
    pub x1: f64,
    pub component: usize,
    pub u_hat: f64,
    pub u_true: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    pub metrics: MetricReport,
    pub timings: Timings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<SliceRow>,
    /// Method-specific scalars (WOT snapshot count, MMOT grid choice, …).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<(String, f64)>,
}

impl MethodReport {
    pub fn drift(&self) -> Option<&DriftMse> {
        self.metrics.drift.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub method: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dims: Vec<DimRow>,
    pub failures: Vec<StageFailure>,
    pub complete: bool,
    pub wall_s: f64,
}

impl ExperimentReport {
    /// All reports for `method`, in seed order.
    pub fn method(&self, name: &str) -> Vec<&MethodReport> {
        self.methods.iter().filter(|m| m.method == name).collect()
    }

    /// Report for `method` at `seed`.
    pub fn get(&self, name: &str, seed: u64) -> Option<&MethodReport> {
        self.methods
            .iter()
            .find(|m| m.method == name && m.seed == seed)
    }

    /// Same numbers, ignoring wall-clock fields.
    pub fn same_results(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.wall_s = 0.0;
            r.methods
                .iter_mut()
                .for_each(|m| m.timings = Timings::default());
            r.sweep.iter_mut().for_each(|s| s.time_s = 0.0);
            r.dims.iter_mut().for_each(|d| d.time_s = 0.0);
            r
        };
        strip(self) == strip(other)
    }
}

/// Collects per-stage failures instead of aborting the run.
#[derive(Default)]
pub(crate) struct Failures(pub Vec<StageFailure>);

impl Failures {
    pub fn record<T>(&mut self, stage: &str, method: &str, seed: u64, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.0.push(StageFailure {
                    stage: stage.into(),
                    method: method.into(),
                    seed,
                    message: e.to_string(),
                });
                None
            }
        }
    }
}

/// Executes batches → optimize → simulate → metrics for every seed and
/// method in `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let mut report = ExperimentReport {
        config: config.clone(),
        seeds: config.seeds.clone(),
        methods: Vec::new(),
        sweep: Vec::new(),
        dims: Vec::new(),
        failures: Vec::new(),
        complete: true,
        wall_s: 0.0,
    };
    match config.experiment {
        Suite::Sensitivity => {
            let (rows, methods, failures) = run_sensitivity(config)?;
            report.sweep = rows;
            report.methods = methods;
            report.failures = failures;
        }
        Suite::Dimscan => {
            let (rows, methods, failures) = run_dimension_scan(config)?;
            report.dims = rows;
            report.methods = methods;
            report.failures = failures;
        }
        _ => {
            let per_seed = map_indexed(config.seeds.len(), config.jobs, |i| {
                run_seed(config, config.seeds[i])
            });
            for (methods, failures) in per_seed {
                report.methods.extend(methods);
                report.failures.extend(failures.0);
            }
        }
    }
    report.complete = report.failures.is_empty();
    report.wall_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// The `K_ens` pre-cached batches for `seed`.
pub fn draw_batches(
    config: &ExperimentConfig,
    flow: &MarginalFlow,
    seed: u64,
) -> Result<Vec<SampleBatch>> {
    let s = &config.sampling;
    (0..s.k_ens)
        .map(|k| {
            draw_batch(
                flow,
                s.m,
                s.n,
                s.n0,
                s.time_mode,
                &mut rng::stream(seed, &[stage::BATCH, k as u64]),
            )
        })
        .collect()
}

/// Fits `method` (index `j` in the config) on `batches`.
pub fn fit_method(
    config: &ExperimentConfig,
    method: &MethodConfig,
    j: usize,
    batches: &[SampleBatch],
    seed: u64,
) -> Result<(Model, FitSummary)> {
    let loss = &config.loss;
    let init = |r: usize| {
        method
            .model
            .init(&mut rng::stream(seed, &[stage::INIT, j as u64, r as u64]))
    };
    match &method.optimizer {
        OptimizerConfig::QuasiNewton(qn) => {
            let template = init(0)?;
            let starts = (0..qn.restarts)
                .map(|r| init(r).map(|m| m.params().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let mut work = template.clone();
            let (best, runs) = minimize_qn_restarts(
                |w| {
                    work.set_params(w);
                    ensemble_loss(&work, batches, loss)
                },
                &starts,
                qn,
            )?;
            let chosen = &runs[best];
            let summary = FitSummary {
                params: chosen.params.clone(),
                loss: chosen.loss,
                iterations: chosen.iterations,
                restarts: runs
                    .iter()
                    .map(|r| RestartSummary {
                        params: r.params.clone(),
                        loss: r.loss,
                        iterations: r.iterations,
                        stop: format!("{:?}", r.stop),
                    })
                    .collect(),
                trace: chosen.trace.clone(),
                skipped_steps: 0,
            };
            Ok((template.with_params(&chosen.params), summary))
        }
        OptimizerConfig::Adaptive(fo) => {
            let model = init(0)?;
            let mut work = model.clone();
            let mut orng = rng::stream(seed, &[stage::OPTIMIZER, j as u64]);
            let result = minimize_adaptive(
                |w, picks| {
                    work.set_params(w);
                    let mut value = 0.0;
                    let mut grad = vec![0.0; w.len()];
                    for &b in picks {
                        let (v, g) = loss_and_gradient(&work, &batches[b], loss)?;
                        value += v;
                        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                    let k = picks.len() as f64;
                    grad.iter_mut().for_each(|g| *g /= k);
                    Ok((value / k, grad))
                },
                model.params(),
                fo,
                batches.len(),
                &mut orng,
            )?;
            work.set_params(&result.params);
            let (final_loss, _) = ensemble_loss(&work, batches, loss)?;
            let summary = FitSummary {
                params: result.params.clone(),
                loss: final_loss,
                iterations: fo.iterations,
                restarts: Vec::new(),
                trace: result.trace.iter().map(|(_, v)| *v).collect(),
                skipped_steps: result.skipped,
            };
            Ok((model.with_params(&result.params), summary))
        }
    }
}

/// Shared evaluation inputs for one seed.
pub(crate) struct EvalContext<'a> {
    pub config: &'a ExperimentConfig,
    pub flow: &'a MarginalFlow,
    pub seed: u64,
    pub x0: Option<Points>,
    pub references: Vec<Points>,
}

impl<'a> EvalContext<'a> {
    pub fn new(config: &'a ExperimentConfig, flow: &'a MarginalFlow, seed: u64) -> Result<Self> {
        let e = &config.evaluation;
        let (x0, references) = if e.particles > 0 {
            let x0 = flow.sample(
                0.0,
                e.particles,
                &mut rng::stream(seed, &[stage::SIMULATION, 0]),
            )?;
            let refs = e
                .times
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    flow.sample(
                        t,
                        e.reference_particles,
                        &mut rng::stream(seed, &[stage::REFERENCE, i as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(x0), refs)
        } else {
            (None, Vec::new())
        };
        Ok(Self {
            config,
            flow,
            seed,
            x0,
            references,
        })
    }

    fn simulation(&self) -> SimulationConfig {
        let e = &self.config.evaluation;
        SimulationConfig {
            particles: e.particles,
            steps: e.steps,
            horizon: self.flow.horizon,
            sigma: self.flow.sigma(),
            snapshot_times: e.times.clone(),
            execution: self.config.loss.execution,
        }
    }

    /// Simulated snapshots of `field`; `key` separates the SDE noise streams.
    pub fn simulate(&self, field: &dyn VelocityField, key: u64) -> Result<Option<Snapshots>> {
        let Some(x0) = &self.x0 else { return Ok(None) };
        let cfg = self.simulation();
        let snaps = if cfg.sigma > 0.0 {
            simulate_sde(
                field,
                x0,
                &cfg,
                &mut rng::stream(self.seed, &[stage::SIMULATION, 1, key]),
            )?
        } else {
            simulate_ode(field, x0, &cfg)?
        };
        Ok(Some(snaps))
    }

    /// Drift error and marginal metrics of `field`.
    pub fn metrics(
        &self,
        field: &dyn VelocityField,
        snaps: Option<&Snapshots>,
        key: u64,
    ) -> Result<MetricReport> {
        let e = &self.config.evaluation;
        let exec = self.config.loss.execution;
        let drift = match &e.drift {
            Some(spec) => Some(drift_grid_mse(
                field,
                &self.flow.truth(),
                spec,
                &mut rng::stream(self.seed, &[stage::EVALUATION, key]),
                exec,
            )?),
            None => None,
        };
        let mut rows = Vec::new();
        if let Some(snaps) = snaps {
            let kernel = RadialKernel::gaussian(e.mmd_bandwidth)?;
            for (i, (&t, reference)) in e.times.iter().zip(&self.references).enumerate() {
                let sim = snaps
                    .at(t)
                    .ok_or_else(|| Error::Contract(format!("no snapshot at t = {t}")))?;
                let mut prng = rng::stream(self.seed, &[stage::PROJECTION, key, i as u64]);
                let mut row =
                    marginal_row(t, sim, reference, &kernel, e.projections, &mut prng, exec)?;
                if sim.len() > e.mmd_max_points || reference.len() > e.mmd_max_points {
                    row.mmd = crate::metrics::mmd(
                        &sim.head(e.mmd_max_points),
                        &reference.head(e.mmd_max_points),
                        &kernel,
                        exec,
                    )?;
                }
                rows.push(row);
            }
        }
        Ok(MetricReport::from_rows(rows, drift))
    }

    /// Learned vs true drift along the first axis, other coordinates at 0.
    pub fn slices(&self, field: &dyn VelocityField) -> Vec<SliceRow> {
        let d = self.flow.dim();
        let (lo, hi) = match &self.config.evaluation.drift {
            Some(crate::metrics::DriftEvaluation::Grid { x_ranges, .. })
            | Some(crate::metrics::DriftEvaluation::MonteCarlo { x_ranges, .. }) => x_ranges[0],
            None => (-3.0, 3.0),
        };
        let n = 81;
        let mut rows = Vec::with_capacity(self.config.evaluation.times.len() * n * d);
        let (mut u, mut v, mut x) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for &t in &self.config.evaluation.times {
            for i in 0..n {
                x[0] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                field.velocity(t, &x, &mut u);
                self.flow.true_drift_into(t, &x, &mut v);
                for c in 0..d {
                    rows.push(SliceRow {
                        t,
                        x1: x[0],
                        component: c,
                        u_hat: u[c],
                        u_true: v[c],
                    });
                }
            }
        }
        rows
    }

    /// Simulates and scores `field`, recording failures.
    pub fn evaluate(
        &self,
        name: &str,
        field: &dyn VelocityField,
        key: u64,
        failures: &mut Failures,
    ) -> Option<(MetricReport, Timings, Vec<SliceRow>)> {
        let mut timings = Timings::default();
        let t0 = Instant::now();
        let snaps = failures.record("simulate", name, self.seed, self.simulate(field, key))?;
        timings.simulate_s = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let metrics = failures.record(
            "metrics",
            name,
            self.seed,
            self.metrics(field, snaps.as_ref(), key),
        )?;
        timings.metrics_s = t1.elapsed().as_secs_f64();
        if let (Some(s), true) = (&snaps, self.config.output.snapshots) {
            let dir = self.config.output.dir.join("snapshots");
            let path = dir.join(format!(
                "{}_{}_seed{}.csv",
                self.config.experiment.name(),
                name,
                self.seed
            ));
            let written = std::fs::create_dir_all(&dir)
                .map_err(Error::from)
                .and_then(|_| std::fs::File::create(&path).map_err(Error::from))
                .and_then(|f| s.write_csv(std::io::BufWriter::new(f)));
            failures.record("snapshots", name, self.seed, written);
        }
        Some((metrics, timings, self.slices(field)))
    }
}

fn method_report(
    method: &str,
    seed: u64,
    model: Option<String>,
    fit: Option<FitSummary>,
    fit_s: f64,
    evaluated: (MetricReport, Timings, Vec<SliceRow>),
    notes: Vec<(String, f64)>,
) -> MethodReport {
    let (metrics, mut timings, slices) = evaluated;
    timings.fit_s = fit_s;
    MethodReport {
        method: method.into(),
        seed,
        model,
        fit,
        metrics,
        timings,
        slices,
        notes,
    }
}

/// Equally spaced snapshots `t_k = kT/(count − 1)` with `n` draws each.
fn snapshots(
    flow: &MarginalFlow,
    count: usize,
    n: usize,
    seed: u64,
    path: &[u64],
) -> Result<Vec<Snapshot>> {
    if count < 2 {
        return Err(Error::Config("need at least two snapshots".into()));
    }
    (0..count)
        .map(|k| {
            let t = if k + 1 == count {
                flow.horizon
            } else {
                flow.horizon * k as f64 / (count - 1) as f64
            };
            let mut p = path.to_vec();
            p.push(k as u64);
            Ok(Snapshot {
                t,
                points: flow.sample(t, n, &mut rng::stream(seed, &p))?,
            })
        })
        .collect()
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> (Vec<MethodReport>, Failures) {
    let flow = &config.flow;
    let mut failures = Failures::default();
    let mut out = Vec::new();
    let Some(ctx) = failures.record(
        "references",
        "all",
        seed,
        EvalContext::new(config, flow, seed),
    ) else {
        return (out, failures);
    };

    if !config.methods.is_empty() {
        if let Some(batches) =
            failures.record("sampling", "all", seed, draw_batches(config, flow, seed))
        {
            for (j, method) in config.methods.iter().enumerate() {
                let t0 = Instant::now();
                let Some((model, fit)) = failures.record(
                    "optimize",
                    &method.name,
                    seed,
                    fit_method(config, method, j, &batches, seed),
                ) else {
                    continue;
                };
                let fit_s = t0.elapsed().as_secs_f64();
                if let Some(ev) = ctx.evaluate(&method.name, &model, j as u64, &mut failures) {
                    out.push(method_report(
                        &method.name,
                        seed,
                        Some(method.model.label()),
                        Some(fit),
                        fit_s,
                        ev,
                        Vec::new(),
                    ));
                }
            }
        }
    }

    let b = &config.baselines;
    let key = |k: u64| 1000 + k;
    if b.zero {
        let zero = ZeroDrift(flow.dim());
        if let Some(ev) = ctx.evaluate("zero", &zero, key(0), &mut failures) {
            out.push(method_report("zero", seed, None, None, 0.0, ev, Vec::new()));
        }
    }
    if b.truth {
        let truth = flow.truth();
        if let Some(ev) = ctx.evaluate("truth", &truth, key(1), &mut failures) {
            out.push(method_report(
                "truth",
                seed,
                None,
                None,
                0.0,
                ev,
                Vec::new(),
            ));
        }
    }
    if let Some(fm) = &b.flow_matching {
        let t0 = Instant::now();
        let fitted = (|| -> Result<Model> {
            let mu0 = flow.sample(
                0.0,
                fm.samples,
                &mut rng::stream(seed, &[stage::BASELINE, 0, 0]),
            )?;
            let mu1 = flow.sample(
                flow.horizon,
                fm.samples,
                &mut rng::stream(seed, &[stage::BASELINE, 0, 1]),
            )?;
            let template = fm.model.zeros()?;
            let mut cfg = fm.fit.clone();
            cfg.horizon = flow.horizon;
            flow_matching_fit(
                &mu0,
                &mu1,
                &template,
                &cfg,
                &mut rng::stream(seed, &[stage::FLOW_MATCHING]),
            )
        })();
        if let Some(model) = failures.record("optimize", "flow_matching", seed, fitted) {
            let fit_s = t0.elapsed().as_secs_f64();
            if let Some(ev) = ctx.evaluate("flow_matching", &model, key(2), &mut failures) {
                let fit = FitSummary {
                    params: model.params().to_vec(),
                    loss: f64::NAN,
                    iterations: 0,
                    restarts: Vec::new(),
                    trace: Vec::new(),
                    skipped_steps: 0,
                };
                out.push(method_report(
                    "flow_matching",
                    seed,
                    Some(fm.model.label()),
                    Some(fit),
                    fit_s,
                    ev,
                    Vec::new(),
                ));
            }
        }
    }
    if let Some(wot) = &b.wot {
        for &m in &wot.m_list {
            let name = format!("wot_m{m}");
            let t0 = Instant::now();
            let fitted = snapshots(flow, m, wot.n, seed, &[stage::BASELINE, 1, m as u64])
                .and_then(|snaps| wot_drift(&snaps, &wot.sinkhorn));
            let Some(drift) = failures.record("optimize", &name, seed, fitted) else {
                continue;
            };
            let fit_s = t0.elapsed().as_secs_f64();
            let converged = drift.diagnostics.iter().filter(|d| d.0).count() as f64;
            let mean_eps =
                drift.diagnostics.iter().map(|d| d.1).sum::<f64>() / drift.diagnostics.len() as f64;
            if let Some(ev) = ctx.evaluate(&name, &drift, key(100 + m as u64), &mut failures) {
                let notes = vec![
                    ("snapshots".into(), m as f64),
                    ("converged_intervals".into(), converged),
                    ("mean_epsilon".into(), mean_eps),
                ];
                out.push(method_report(&name, seed, None, None, fit_s, ev, notes));
            }
        }
    }
    if let Some(mm) = &b.mmot {
        for &n_snap in &mm.n_list {
            let name = format!("mmot_n{n_snap}");
            let t0 = Instant::now();
            let fitted = snapshots(
                flow,
                n_snap,
                mm.samples,
                seed,
                &[stage::BASELINE, 2, n_snap as u64],
            )
            .and_then(|snaps| {
                let spec = config.evaluation.drift.clone();
                let truth = flow.truth();
                // every grid cell is scored on the same draws
                let srng = rng::stream(seed, &[stage::BASELINE, 3, n_snap as u64]);
                let exec = config.loss.execution;
                mmot_affine_fit(
                    &snaps,
                    &mm.fit,
                    &mut rng::stream(seed, &[stage::BASELINE, 4, n_snap as u64]),
                    |chain| {
                        spec.as_ref()
                            .and_then(|s| {
                                drift_grid_mse(chain, &truth, s, &mut srng.clone(), exec).ok()
                            })
                            .map_or(f64::INFINITY, |m| m.total)
                    },
                )
            });
            let Some(fit) = failures.record("optimize", &name, seed, fitted) else {
                continue;
            };
            let fit_s = t0.elapsed().as_secs_f64();
            for (lambda, alpha, init, msg) in &fit.failures {
                failures.0.push(StageFailure {
                    stage: format!("mmot_cell(lambda={lambda}, alpha={alpha}, init={init})"),
                    method: name.clone(),
                    seed,
                    message: msg.clone(),
                });
            }
            let cell = &fit.cells[fit.best_cell];
            let notes = vec![
                ("snapshots".into(), n_snap as f64),
                ("lambda".into(), cell.lambda),
                ("alpha".into(), cell.alpha),
                ("init".into(), cell.init as f64),
                ("objective".into(), cell.objective),
            ];
            if let Some(ev) =
                ctx.evaluate(&name, &fit.best, key(200 + n_snap as u64), &mut failures)
            {
                out.push(method_report(&name, seed, None, None, fit_s, ev, notes));
            }
        }
    }
    (out, failures)
}
