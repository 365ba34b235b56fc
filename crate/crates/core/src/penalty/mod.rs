//! Sample-based loss: kinetic energy plus `λ` times the three-sum estimator
//! `𝒬̂(u)` of the integrated RKHS norm of the continuity-equation residual.
//!
//! With `MN` batch points `y_p = (t_p, x_p)` and `N₀` initial points
//! `z_k = (0, x₀ₖ)`,
//!
//! ```text
//! 𝒬̂(u) =  T²/(M²N²) Σ_{p≠q} (T − t_p ∨ t_q) 𝒜ᵘ𝒜ᵘK(y_p, y_q)
//!       + 2T/(MNN₀) Σ_p Σ_k (T − t_p) 𝒜ᵘ_{y_p} K(z_k, y_p)
//!       − 2T²/(M²N²) Σ_{p≠q} 1[t_p ≤ t_q] 𝒜ᵘ_{y_p} K(y_q, y_p)
//! ```
//!
//! The estimator only sees the drift through its values `u_p = u(y_p)`, so
//! the loss is computed as a function of those values, together with its
//! gradient `∂L/∂u_p`; models then pull that back to their parameters.
//! The `u`-independent parts of the residual norm are dropped, so `𝒬̂` may
//! be negative.
//!
//! Pair sums visit each unordered pair once without materializing any kernel
//! matrix. Rows are grouped in fixed blocks whose partial sums are reduced in
//! block order, which makes the value bit-identical for any number of workers.

mod batch;

pub use batch::{draw_batch, slice_times, SampleBatch, TimeMode};

use crate::error::{Error, Result};
use crate::flows::MarginalFlow;
use crate::kernel::{KernelProfile, LadderOrder, RadialKernel};
use crate::models::{DriftModel, VelocityField};
use crate::par::{map_blocks, Execution};
use crate::rng;
use serde::{Deserialize, Serialize};

const ROW_BLOCK: usize = 32;
const POINT_BLOCK: usize = 256;

/// Loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub kernel: RadialKernel,
    /// Also exclude same-slice pairs from the two pair sums. Off by default.
    #[serde(default)]
    pub same_slice_mask: bool,
    #[serde(default)]
    pub execution: Execution,
}

fn one() -> f64 {
    1.0
}

impl LossConfig {
    pub fn new(lambda: f64, sigma: f64, horizon: f64, kernel: RadialKernel) -> Result<Self> {
        let cfg = Self {
            lambda,
            sigma,
            horizon,
            kernel,
            same_slice_mask: false,
            execution: Execution::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

/// `ŵ_pq = T − max(t_p, t_q)`.
#[inline]
pub fn pair_weight(horizon: f64, tp: f64, tq: f64) -> f64 {
    horizon - tp.max(tq)
}

/// Kinetic energy, penalty, and optionally `∂(kinetic + λ𝒬̂)/∂u_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftLoss {
    pub kinetic: f64,
    pub qhat: f64,
    pub total: f64,
    /// Row-major `MN × d`, present when requested.
    pub grad_drift: Option<Vec<f64>>,
}

fn check_alignment(batch: &SampleBatch, drift: &[f64]) -> Result<()> {
    let expected = batch.n_points() * batch.dim();
    if drift.len() != expected {
        return Err(Error::Contract(format!(
            "drift buffer has {} entries, batch needs {expected}",
            drift.len()
        )));
    }
    Ok(())
}

/// `T/(MN) Σ_p |u_p|²`.
pub fn kinetic_energy(batch: &SampleBatch, drift: &[f64], horizon: f64) -> Result<f64> {
    check_alignment(batch, drift)?;
    let sum: f64 = drift.iter().map(|v| v * v).sum();
    Ok(horizon * sum / batch.n_points() as f64)
}

/// `𝒬̂(u)` from drift values at the batch points.
pub fn penalty_qhat(batch: &SampleBatch, drift: &[f64], config: &LossConfig) -> Result<f64> {
    Ok(evaluate_drift_loss(batch, drift, config, false)?.qhat)
}

/// Evaluates the loss as a function of the drift values on `batch`.
pub fn evaluate_drift_loss(
    batch: &SampleBatch,
    drift: &[f64],
    config: &LossConfig,
    want_grad: bool,
) -> Result<DriftLoss> {
    config.validate()?;
    check_alignment(batch, drift)?;
    if (batch.horizon() - config.horizon).abs() > 1e-12 * config.horizon {
        return Err(Error::Contract("batch and loss horizons differ".into()));
    }
    let n_pts = batch.n_points();
    let d = batch.dim();
    let horizon = config.horizon;
    let mn = n_pts as f64;
    let c_bulk = horizon * horizon / (mn * mn);
    let ctx = PairContext {
        d,
        xs: batch.particles().as_slice(),
        times: batch.point_times(),
        slices: (0..n_pts).map(|p| batch.slice_of(p)).collect(),
        drift,
        initial: batch.initial(),
        kernel: config.kernel,
        s: 0.5 * config.sigma * config.sigma,
        horizon,
        mask: config.same_slice_mask,
        want_grad,
        c_bulk,
        c_bound: 2.0 * horizon / (mn * batch.n_initial() as f64),
        c_cross: 2.0 * c_bulk,
    };
    let fast = config.sigma == 0.0 && config.kernel.profile() == KernelProfile::Gaussian;
    let blocks = map_blocks(n_pts, ROW_BLOCK, config.execution, |rows| match (fast, d) {
        (true, 1) => ctx.block::<true, 1>(rows),
        (true, 2) => ctx.block::<true, 2>(rows),
        (true, _) => ctx.block::<true, 0>(rows),
        (false, 1) => ctx.block::<false, 1>(rows),
        (false, _) => ctx.block::<false, 0>(rows),
    });

    let mut qhat = 0.0;
    let mut grad = if want_grad {
        vec![0.0; n_pts * d]
    } else {
        Vec::new()
    };
    for b in blocks {
        qhat += b.value;
        if want_grad {
            grad.iter_mut().zip(&b.grad).for_each(|(g, v)| *g += v);
        }
    }
    let kinetic = kinetic_energy(batch, drift, horizon)?;
    let total = kinetic + config.lambda * qhat;
    let grad_drift = want_grad.then(|| {
        let kin_scale = 2.0 * horizon / mn;
        grad.iter()
            .zip(drift)
            .map(|(g, u)| kin_scale * u + config.lambda * g)
            .collect()
    });
    Ok(DriftLoss {
        kinetic,
        qhat,
        total,
        grad_drift,
    })
}

/// Partial `𝒬̂` and `∂𝒬̂/∂u` from one block of rows.
struct BlockTerms {
    value: f64,
    grad: Vec<f64>,
}

struct PairContext<'a> {
    d: usize,
    xs: &'a [f64],
    times: Vec<f64>,
    slices: Vec<usize>,
    drift: &'a [f64],
    initial: &'a crate::points::Points,
    kernel: RadialKernel,
    s: f64,
    horizon: f64,
    mask: bool,
    want_grad: bool,
    c_bulk: f64,
    c_bound: f64,
    c_cross: f64,
}

impl PairContext<'_> {
    /// Rows `p` in `rows` against every `q > p`, plus each row's boundary
    /// sum. Each unordered pair is visited once: the bulk term is symmetric
    /// and both ordered cross terms share the same kernel ladder.
    ///
    /// `FAST` selects the Gaussian `σ = 0` closed form
    /// `𝒜𝒜′K = [−a²ττ′ + a(1 + uᵀu′)]K`, `𝒜K = −aKτ`. A nonzero `D` fixes
    /// the dimension at compile time.
    fn block<const FAST: bool, const D: usize>(&self, rows: std::ops::Range<usize>) -> BlockTerms {
        let d = if D > 0 { D } else { self.d };
        let n = self.times.len();
        let df = d as f64;
        let s = self.s;
        let a = 1.0 / (self.kernel.bandwidth() * self.kernel.bandwidth());
        let order = if s > 0.0 {
            LadderOrder::Fourth
        } else {
            LadderOrder::Second
        };
        let mut grad = if self.want_grad {
            vec![0.0; n * d]
        } else {
            Vec::new()
        };
        let (mut bulk, mut cross, mut bound) = (0.0, 0.0, 0.0);
        // gradient weights: bulk pairs carry 2·c_bulk (ordered sum = 2 × unordered)
        let gb = 2.0 * self.c_bulk;
        let gc = self.c_cross;
        for p in rows {
            let tp = self.times[p];
            let xp = &self.xs[p * d..(p + 1) * d];
            let up = &self.drift[p * d..(p + 1) * d];
            for q in p + 1..n {
                if self.mask && self.slices[p] == self.slices[q] {
                    continue;
                }
                let tq = self.times[q];
                let xq = &self.xs[q * d..(q + 1) * d];
                let uq = &self.drift[q * d..(q + 1) * d];
                let dt = tp - tq;
                let (mut rho, mut tau_p, mut tau_q, mut uu) = (0.0, dt, dt, 0.0);
                for i in 0..d {
                    let dx = xp[i] - xq[i];
                    rho += dx * dx;
                    tau_p += up[i] * dx;
                    tau_q += uq[i] * dx;
                    uu += up[i] * uq[i];
                }
                let w = self.horizon - tp.max(tq);
                let p_first = tp <= tq;
                let q_first = tq <= tp;
                // (φ₁, φ₂, s·C1) and the σ-only part of 𝒜K
                let (phi1, phi2, sc1, a_extra);
                if FAST {
                    let k = (-0.5 * a * (dt * dt + rho)).exp();
                    phi1 = -a * k;
                    phi2 = a * a * k;
                    sc1 = 0.0;
                    a_extra = 0.0;
                    bulk += 2.0 * w * (-phi2 * tau_p * tau_q - phi1 * (1.0 + uu));
                } else {
                    let l = self.kernel.ladder_sq(dt * dt + rho, order);
                    phi1 = l.phi1;
                    phi2 = l.phi2;
                    let mut aa = -phi2 * tau_p * tau_q - phi1 * (1.0 + uu);
                    if s > 0.0 {
                        let c1 = (df + 2.0) * l.phi2 + rho * l.phi3;
                        let c2 = df * (df + 2.0) * l.phi2
                            + 2.0 * (df + 2.0) * rho * l.phi3
                            + rho * rho * l.phi4;
                        aa += s * (tau_p - tau_q) * c1 + s * s * c2;
                        sc1 = s * c1;
                        a_extra = s * (df * l.phi1 + rho * l.phi2);
                    } else {
                        sc1 = 0.0;
                        a_extra = 0.0;
                    }
                    bulk += 2.0 * w * aa;
                }
                // 𝒜ᵘᵖ_{y_p}K(y_q, y_p) = φ₁τ_p + extra; 𝒜ᵘ𝑞_{y_q}K(y_p, y_q) = −φ₁τ_q + extra
                if p_first {
                    cross += phi1 * tau_p + a_extra;
                }
                if q_first {
                    cross += -phi1 * tau_q + a_extra;
                }
                if self.want_grad {
                    let (lo, hi) = grad.split_at_mut(q * d);
                    let (gp, gq) = (&mut lo[p * d..(p + 1) * d], &mut hi[..d]);
                    for i in 0..d {
                        let dx = xp[i] - xq[i];
                        gp[i] += gb * w * (-phi2 * tau_q * dx - phi1 * uq[i] + sc1 * dx);
                        gq[i] += gb * w * (-phi2 * tau_p * dx - phi1 * up[i] - sc1 * dx);
                        if p_first {
                            gp[i] -= gc * phi1 * dx;
                        }
                        if q_first {
                            gq[i] += gc * phi1 * dx;
                        }
                    }
                }
            }
            bound += self.boundary(p, tp, xp, up, &mut grad);
        }
        BlockTerms {
            value: self.c_bulk * bulk - self.c_cross * cross + self.c_bound * bound,
            grad,
        }
    }

    /// `(T − t_p) Σ_k 𝒜ᵘ_{y_p} K(z_k, y_p)`; adds its scaled gradient to row `p`.
    fn boundary(&self, p: usize, tp: f64, xp: &[f64], up: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.d;
        let df = d as f64;
        let weight = self.horizon - tp;
        let mut sum = 0.0;
        let mut g = [0.0; 16];
        let mut heap;
        let g: &mut [f64] = if d <= 16 {
            &mut g[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for z in self.initial.iter() {
            let (mut rho, mut tau) = (0.0, tp);
            for i in 0..d {
                let dx = xp[i] - z[i];
                rho += dx * dx;
                tau += up[i] * dx;
            }
            let l = self.kernel.ladder_sq(tp * tp + rho, LadderOrder::Second);
            sum += l.phi1 * tau;
            if self.s > 0.0 {
                sum += self.s * (df * l.phi1 + rho * l.phi2);
            }
            if self.want_grad {
                for i in 0..d {
                    g[i] += l.phi1 * (xp[i] - z[i]);
                }
            }
        }
        if self.want_grad {
            let scale = self.c_bound * weight;
            for i in 0..d {
                grad[p * d + i] += scale * g[i];
            }
        }
        weight * sum
    }
}

/// Drift values of `field` at every batch point, row-major `MN × d`.
pub fn batch_drift<V: VelocityField + ?Sized>(
    field: &V,
    batch: &SampleBatch,
    exec: Execution,
) -> Vec<f64> {
    let d = batch.dim();
    map_blocks(batch.n_points(), POINT_BLOCK, exec, |range| {
        let mut out = vec![0.0; range.len() * d];
        for (j, p) in range.enumerate() {
            field.velocity(batch.time(p), batch.x(p), &mut out[j * d..(j + 1) * d]);
        }
        out
    })
    .concat()
}

fn pull_back<M: DriftModel + ?Sized>(
    model: &M,
    batch: &SampleBatch,
    cot: &[f64],
    exec: Execution,
) -> Vec<f64> {
    let d = batch.dim();
    let n_params = model.n_params();
    let partial = map_blocks(batch.n_points(), POINT_BLOCK, exec, |range| {
        let mut g = vec![0.0; n_params];
        for p in range {
            model.accumulate_param_grad(
                batch.time(p),
                batch.x(p),
                &cot[p * d..(p + 1) * d],
                &mut g,
            );
        }
        g
    });
    let mut grad = vec![0.0; n_params];
    for g in partial {
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    grad
}

fn check_model<M: DriftModel + ?Sized>(model: &M, batch: &SampleBatch) -> Result<()> {
    if model.dim() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            got: model.dim(),
        });
    }
    Ok(())
}

/// `kinetic + λ𝒬̂` for `model` on one batch.
pub fn total_loss<M: DriftModel + ?Sized>(
    model: &M,
    batch: &SampleBatch,
    config: &LossConfig,
) -> Result<f64> {
    check_model(model, batch)?;
    let drift = batch_drift(model, batch, config.execution);
    Ok(evaluate_drift_loss(batch, &drift, config, false)?.total)
}

/// Loss and parameter gradient on one batch.
pub fn loss_and_gradient<M: DriftModel + ?Sized>(
    model: &M,
    batch: &SampleBatch,
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_model(model, batch)?;
    let drift = batch_drift(model, batch, config.execution);
    let loss = evaluate_drift_loss(batch, &drift, config, true)?;
    let cot = loss.grad_drift.expect("gradient requested");
    Ok((loss.total, pull_back(model, batch, &cot, config.execution)))
}

/// Parameter gradient on one batch.
pub fn loss_gradient<M: DriftModel + ?Sized>(
    model: &M,
    batch: &SampleBatch,
    config: &LossConfig,
) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(model, batch, config)?.1)
}

/// Mean loss and mean gradient over `batches`.
pub fn ensemble_loss<M: DriftModel + ?Sized>(
    model: &M,
    batches: &[SampleBatch],
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if batches.is_empty() {
        return Err(Error::Contract("ensemble needs at least one batch".into()));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; model.n_params()];
    for batch in batches {
        let (v, g) = loss_and_gradient(model, batch, config)?;
        value += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let k = batches.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    Ok((value / k, grad))
}

/// Mean loss only.
pub fn ensemble_value<M: DriftModel + ?Sized>(
    model: &M,
    batches: &[SampleBatch],
    config: &LossConfig,
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Contract("ensemble needs at least one batch".into()));
    }
    let mut value = 0.0;
    for batch in batches {
        value += total_loss(model, batch, config)?;
    }
    Ok(value / batches.len() as f64)
}

/// Kinetic and penalty parts of the mean loss, for reporting.
pub fn ensemble_breakdown<M: DriftModel + ?Sized>(
    model: &M,
    batches: &[SampleBatch],
    config: &LossConfig,
) -> Result<(f64, f64)> {
    let (mut kin, mut q) = (0.0, 0.0);
    for batch in batches {
        let drift = batch_drift(model, batch, config.execution);
        let l = evaluate_drift_loss(batch, &drift, config, false)?;
        kin += l.kinetic;
        q += l.qhat;
    }
    let k = batches.len().max(1) as f64;
    Ok((kin / k, q / k))
}

// ---------------------------------------------------------------------------
// Bias probe
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeConfig {
    pub m_list: Vec<usize>,
    pub n: usize,
    pub n0: usize,
    pub seeds: usize,
    #[serde(default = "iid")]
    pub time_mode: TimeMode,
    /// Optional large-`M` reference point for the extrapolation check.
    #[serde(default)]
    pub reference_m: Option<usize>,
    #[serde(default)]
    pub reference_seeds: Option<usize>,
}

fn iid() -> TimeMode {
    TimeMode::IidUniform
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub m: usize,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeReport {
    pub rows: Vec<BiasRow>,
    /// Fit `mean(M) ≈ intercept + slope / M`.
    pub intercept: f64,
    pub slope: f64,
    pub intercept_std_err: f64,
    pub r_squared: f64,
    pub reference: Option<BiasRow>,
}

#[allow(clippy::too_many_arguments)]
fn qhat_ensemble<V: VelocityField + ?Sized>(
    flow: &MarginalFlow,
    drift: &V,
    config: &LossConfig,
    m: usize,
    n: usize,
    n0: usize,
    mode: TimeMode,
    seeds: usize,
    master: u64,
) -> Result<BiasRow> {
    let values = crate::par::map_indexed(seeds, config.execution, |s| {
        let mut stream = rng::stream(master, &[rng::stage::BATCH, m as u64, s as u64]);
        let batch = draw_batch(flow, m, n, n0, mode, &mut stream)?;
        let u = batch_drift(drift, &batch, Execution::Sequential);
        let cfg = config.clone().with_execution(Execution::Sequential);
        penalty_qhat(&batch, &u, &cfg)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    Ok(BiasRow {
        m,
        mean,
        std_err: (var / k).sqrt(),
    })
}

/// Mean `𝒬̂` of a fixed drift as a function of `M`, with an affine fit in `1/M`.
pub fn bias_probe<V: VelocityField + ?Sized>(
    flow: &MarginalFlow,
    drift: &V,
    config: &LossConfig,
    probe: &BiasProbeConfig,
    master_seed: u64,
) -> Result<BiasProbeReport> {
    if probe.m_list.len() < 2 {
        return Err(Error::Config(
            "bias probe needs at least two M values".into(),
        ));
    }
    if probe.seeds < 2 {
        return Err(Error::Config("bias probe needs at least two seeds".into()));
    }
    let rows = probe
        .m_list
        .iter()
        .map(|&m| {
            qhat_ensemble(
                flow,
                drift,
                config,
                m,
                probe.n,
                probe.n0,
                probe.time_mode,
                probe.seeds,
                master_seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| 1.0 / r.m as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let fit = affine_fit(&xs, &ys);
    let reference = match probe.reference_m {
        Some(m) => Some(qhat_ensemble(
            flow,
            drift,
            config,
            m,
            probe.n,
            probe.n0,
            probe.time_mode,
            probe.reference_seeds.unwrap_or(probe.seeds),
            master_seed,
        )?),
        None => None,
    };
    Ok(BiasProbeReport {
        rows,
        intercept: fit.intercept,
        slope: fit.slope,
        intercept_std_err: fit.intercept_std_err,
        r_squared: fit.r_squared,
        reference,
    })
}

struct AffineFit {
    intercept: f64,
    slope: f64,
    intercept_std_err: f64,
    r_squared: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
fn affine_fit(xs: &[f64], ys: &[f64]) -> AffineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let resid_var = if n > 2.0 { sse / (n - 2.0) } else { 0.0 };
    let intercept_std_err = (resid_var * (1.0 / n + mx * mx / sxx)).sqrt();
    AffineFit {
        intercept,
        slope,
        intercept_std_err,
        r_squared,
    }
}
