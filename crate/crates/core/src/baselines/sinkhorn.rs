use crate::error::{Error, Result};
use crate::points::Points;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    /// Fixed `ε`; when absent, `epsilon_scale × mean(C)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub epsilon_scale: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_scale: 0.05,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn resolve_epsilon(&self, cost: &[f64]) -> f64 {
        self.epsilon.unwrap_or_else(|| {
            let mean = cost.iter().sum::<f64>() / cost.len().max(1) as f64;
            (self.epsilon_scale * mean).max(f64::MIN_POSITIVE)
        })
    }
}

/// Log-domain Sinkhorn solution. The plan is
/// `π_ij = a_i b_j exp((f_i + g_j − C_ij)/ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropicCoupling {
    pub n: usize,
    pub m: usize,
    pub cost: Vec<f64>,
    pub log_a: Vec<f64>,
    pub log_b: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub converged: bool,
    pub violation: f64,
    pub iterations: usize,
}

impl EntropicCoupling {
    #[inline]
    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log_a[i]
            + self.log_b[j]
            + (self.f[i] + self.g[j] - self.cost[i * self.m + j]) / self.epsilon
    }

    /// Dense row-major plan.
    pub fn plan(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n * self.m);
        for i in 0..self.n {
            for j in 0..self.m {
                p.push(self.log_entry(i, j).exp());
            }
        }
        p
    }

    /// Largest deviation of row and column sums from the marginals.
    pub fn marginal_violation(&self) -> f64 {
        let p = self.plan();
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let row: f64 = p[i * self.m..(i + 1) * self.m].iter().sum();
            worst = worst.max((row - self.log_a[i].exp()).abs());
        }
        for j in 0..self.m {
            let col: f64 = (0..self.n).map(|i| p[i * self.m + j]).sum();
            worst = worst.max((col - self.log_b[j].exp()).abs());
        }
        worst
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Squared Euclidean cost matrix, row-major `|x| × |y|`.
pub fn sq_cost(x: &Points, y: &Points) -> Result<Vec<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(x.iter()
        .flat_map(|a| {
            y.iter()
                .map(move |b| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
        })
        .collect())
}

/// Alternating log-domain potential updates until the largest marginal
/// violation is at most `tol` or `max_iter` is reached. Non-convergence is
/// reported through [`EntropicCoupling::converged`].
pub fn sinkhorn_log(
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<EntropicCoupling> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::Empty("sinkhorn marginals"));
    }
    if cost.len() != n * m {
        return Err(Error::Contract(format!(
            "cost has {} entries, need {}",
            cost.len(),
            n * m
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    for w in [a, b] {
        if w.iter().any(|v| !(*v > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(
                "marginal weights must be positive and sum to one".into(),
            ));
        }
    }
    let mut c = EntropicCoupling {
        n,
        m,
        cost: cost.to_vec(),
        log_a: a.iter().map(|v| v.ln()).collect(),
        log_b: b.iter().map(|v| v.ln()).collect(),
        f: vec![0.0; n],
        g: vec![0.0; m],
        epsilon,
        converged: false,
        violation: f64::INFINITY,
        iterations: 0,
    };
    let mut row_log = vec![0.0; n];
    for it in 1..=max_iter {
        for i in 0..n {
            let lse =
                log_sum_exp((0..m).map(|j| c.log_b[j] + (c.g[j] - c.cost[i * m + j]) / epsilon));
            c.f[i] = -epsilon * lse;
        }
        for j in 0..m {
            let lse =
                log_sum_exp((0..n).map(|i| c.log_a[i] + (c.f[i] - c.cost[i * m + j]) / epsilon));
            c.g[j] = -epsilon * lse;
        }
        // columns are exact after the g-update; rows carry the violation
        let mut viol: f64 = 0.0;
        for (i, r) in row_log.iter_mut().enumerate() {
            *r = log_sum_exp((0..m).map(|j| c.log_entry(i, j)));
            viol = viol.max((r.exp() - c.log_a[i].exp()).abs());
        }
        c.iterations = it;
        c.violation = viol;
        if viol <= tol {
            c.converged = true;
            break;
        }
    }
    Ok(c)
}

/// Draws `n_out` pairs `(i, j) ~ π` and emits `(1 − s)x_i + s y_j`.
pub fn mccann_interpolate<R: Rng + ?Sized>(
    coupling: &EntropicCoupling,
    source: &Points,
    target: &Points,
    s: f64,
    rng: &mut R,
    n_out: usize,
) -> Result<Points> {
    if !coupling.converged {
        return Err(Error::NotConverged {
            violation: coupling.violation,
        });
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Range(format!("fraction {s} outside [0, 1]")));
    }
    if source.len() != coupling.n || target.len() != coupling.m || source.dim() != target.dim() {
        return Err(Error::Contract("samples do not match the coupling".into()));
    }
    let dist = WeightedIndex::new(coupling.plan()).map_err(|e| Error::Contract(e.to_string()))?;
    let d = source.dim();
    let mut out = Vec::with_capacity(n_out * d);
    for _ in 0..n_out {
        let k = dist.sample(rng);
        let (x, y) = (source.get(k / coupling.m), target.get(k % coupling.m));
        out.extend(x.iter().zip(y).map(|(a, b)| (1.0 - s) * a + s * b));
    }
    Points::new(d, out)
}
