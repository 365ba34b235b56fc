use super::inf_norm;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasiNewtonConfig {
    pub memory: usize,
    /// Stop when `‖∇f‖∞` falls below this.
    pub grad_tol: f64,
    /// Stop when `(f_k − f_{k+1}) ≤ f_tol · max(|f_k|, |f_{k+1}|, 1)`.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Number of independent initializations.
    pub restarts: usize,
    /// Accepted for config compatibility; not enforced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-5,
            f_tol: 2.2e-9,
            max_iter: 500,
            restarts: 4,
            bounds: None,
        }
    }
}

impl QuasiNewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || self.f_tol < 0.0 {
            return Err(Error::Config(
                "quasi-Newton tolerances must be positive".into(),
            ));
        }
        if self.memory == 0 || self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::Config(
                "memory, max_iter and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QnResult {
    pub params: Vec<f64>,
    pub loss: f64,
    pub initial_loss: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn checked<F>(f: &mut F, w: &[f64], evals: &mut usize) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    *evals += 1;
    let (v, g) = f(w)?;
    if g.len() != w.len() {
        return Err(Error::Contract(format!(
            "gradient has {} entries, expected {}",
            g.len(),
            w.len()
        )));
    }
    Ok((v, g))
}

/// L-BFGS with backtracking Armijo line search.
///
/// A non-finite value or gradient at the starting point aborts; non-finite
/// trial points inside the line search are treated as insufficient decrease.
pub fn minimize_qn<F>(mut f: F, w0: &[f64], config: &QuasiNewtonConfig) -> Result<QnResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    config.validate()?;
    let n = w0.len();
    let mut evals = 0;
    let mut w = w0.to_vec();
    let (mut fx, mut g) = checked(&mut f, &w, &mut evals)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer(format!(
            "non-finite loss {fx} at the initial point"
        )));
    }
    let initial_loss = fx;
    let mut trace = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iter {
        if inf_norm(&g) <= config.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut dir = two_loop(&g, &hist);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if hist.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = checked(&mut f, &trial, &mut evals)?;
            if ft.is_finite()
                && gt.iter().all(|v| v.is_finite())
                && ft <= fx + ARMIJO_C1 * step * slope
            {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, f_new, g_new)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == config.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let f_old = fx;
        w = w_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        if f_old - fx <= config.f_tol * f_old.abs().max(fx.abs()).max(1.0) {
            stop = if inf_norm(&g) <= config.grad_tol {
                StopReason::GradientTolerance
            } else {
                StopReason::FunctionTolerance
            };
            break;
        }
    }
    debug_assert_eq!(w.len(), n);
    Ok(QnResult {
        grad_inf_norm: inf_norm(&g),
        params: w,
        loss: fx,
        initial_loss,
        iterations,
        evaluations: evals,
        stop,
        trace,
    })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Runs [`minimize_qn`] from every start and returns the index of the best
/// run together with all runs.
pub fn minimize_qn_restarts<F>(
    mut f: F,
    starts: &[Vec<f64>],
    config: &QuasiNewtonConfig,
) -> Result<(usize, Vec<QnResult>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if starts.is_empty() {
        return Err(Error::Config("at least one starting point required".into()));
    }
    let runs = starts
        .iter()
        .map(|w0| minimize_qn(&mut f, w0, config))
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok((best, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (x, y) = (w[0], w[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![
            -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ];
        Ok((f, g))
    }

    #[test]
    fn quadratic_bowl() {
        let a = [3.0, -1.5, 0.25, 7.0];
        let f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = w.iter().zip(&a).map(|(x, c)| (x - c).powi(2)).sum();
            Ok((v, w.iter().zip(&a).map(|(x, c)| 2.0 * (x - c)).collect()))
        };
        let cfg = QuasiNewtonConfig {
            grad_tol: 1e-10,
            f_tol: 0.0,
            ..Default::default()
        };
        let r = minimize_qn(f, &[0.0; 4], &cfg).unwrap();
        for (x, c) in r.params.iter().zip(&a) {
            assert!((x - c).abs() < 1e-8);
        }
        assert_eq!(r.stop, StopReason::GradientTolerance);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = QuasiNewtonConfig {
            grad_tol: 1e-9,
            f_tol: 0.0,
            max_iter: 2000,
            ..Default::default()
        };
        let r = minimize_qn(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(
            (r.params[0] - 1.0).abs() < 1e-4 && (r.params[1] - 1.0).abs() < 1e-4,
            "{:?}",
            r.params
        );
        assert!(r.loss <= r.initial_loss);
    }

    #[test]
    fn deterministic_and_monotone() {
        let cfg = QuasiNewtonConfig::default();
        let a = minimize_qn(rosenbrock, &[0.3, -0.4], &cfg).unwrap();
        let b = minimize_qn(rosenbrock, &[0.3, -0.4], &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_aborts() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            minimize_qn(f, &[0.0], &QuasiNewtonConfig::default()),
            Err(Error::Optimizer(_))
        ));
    }

    #[test]
    fn restarts_pick_lowest() {
        // two wells: (x² − 1)² + 0.1x, deeper at x ≈ −1
        let f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            let x = w[0];
            Ok((
                (x * x - 1.0).powi(2) + 0.1 * x,
                vec![4.0 * x * (x * x - 1.0) + 0.1],
            ))
        };
        let (best, runs) =
            minimize_qn_restarts(f, &[vec![0.8], vec![-0.8]], &QuasiNewtonConfig::default())
                .unwrap();
        assert_eq!(best, 1);
        assert!(runs[0].params[0] > 0.0 && runs[1].params[0] < 0.0);
    }
}
