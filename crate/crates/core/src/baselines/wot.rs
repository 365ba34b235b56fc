use super::sinkhorn::{sinkhorn_log, sq_cost, SinkhornConfig};
use super::Snapshot;
use crate::error::{Error, Result};
use crate::models::VelocityField;
use crate::points::Points;

/// Piecewise-constant drift from barycentric projections between
/// consecutive snapshots. Off-sample positions use the nearest source
/// particle of the active interval.
#[derive(Clone, Debug)]
pub struct WotDrift {
    times: Vec<f64>,
    sources: Vec<Points>,
    velocities: Vec<Points>,
    /// Converged flag and `ε` per interval.
    pub diagnostics: Vec<(bool, f64)>,
}

impl WotDrift {
    pub fn n_intervals(&self) -> usize {
        self.sources.len()
    }

    fn interval(&self, t: f64) -> usize {
        let k = self.times.partition_point(|s| *s <= t);
        k.saturating_sub(1).min(self.sources.len() - 1)
    }

    /// Source particles and their velocities on interval `k`.
    pub fn interval_data(&self, k: usize) -> (&Points, &Points) {
        (&self.sources[k], &self.velocities[k])
    }
}

impl VelocityField for WotDrift {
    fn dim(&self) -> usize {
        self.sources[0].dim()
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let k = self.interval(t);
        let src = &self.sources[k];
        let mut best = (f64::INFINITY, 0);
        for (i, p) in src.iter().enumerate() {
            let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < best.0 {
                best = (r2, i);
            }
        }
        out.copy_from_slice(self.velocities[k].get(best.1));
    }
}

/// Chains entropic couplings between consecutive snapshots and converts the
/// barycentric displacement into a velocity `(T_k(x) − x)/Δt`.
pub fn wot_drift(snapshots: &[Snapshot], config: &SinkhornConfig) -> Result<WotDrift> {
    if snapshots.len() < 2 {
        return Err(Error::Contract("WOT needs at least two snapshots".into()));
    }
    if snapshots.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::Config(
            "snapshot times must be strictly increasing".into(),
        ));
    }
    let d = snapshots[0].points.dim();
    let mut sources = Vec::new();
    let mut velocities = Vec::new();
    let mut diagnostics = Vec::new();
    for pair in snapshots.windows(2) {
        let (x, y) = (&pair[0].points, &pair[1].points);
        if x.is_empty() || y.is_empty() {
            return Err(Error::Empty("snapshot"));
        }
        let cost = sq_cost(x, y)?;
        let eps = config.resolve_epsilon(&cost);
        let a = vec![1.0 / x.len() as f64; x.len()];
        let b = vec![1.0 / y.len() as f64; y.len()];
        let c = sinkhorn_log(&cost, &a, &b, eps, config.max_iter, config.tol)?;
        let dt = pair[1].t - pair[0].t;
        let m = y.len();
        let mut vel = Vec::with_capacity(x.len() * d);
        for i in 0..x.len() {
            let logs: Vec<f64> = (0..m).map(|j| c.log_entry(i, j)).collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            for k in 0..d {
                let bary = w
                    .iter()
                    .zip(y.iter())
                    .map(|(wj, yj)| wj * yj[k])
                    .sum::<f64>()
                    / total;
                vel.push((bary - x.get(i)[k]) / dt);
            }
        }
        sources.push(x.clone());
        velocities.push(Points::new(d, vel)?);
        diagnostics.push((c.converged, eps));
    }
    Ok(WotDrift {
        times: snapshots.iter().map(|s| s.t).collect(),
        sources,
        velocities,
        diagnostics,
    })
}
