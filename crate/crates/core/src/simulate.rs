//! Forward particle simulation: explicit Euler for `σ = 0`, Euler–Maruyama
//! for `σ > 0`.
//!
//! The step grid is `k·T/steps` with every snapshot time inserted, so
//! snapshots are exact scheme states. Particles are advanced in fixed-size
//! chunks; the SDE noise for chunk `c` comes from its own derived stream, so
//! results do not depend on the number of workers.

use crate::error::{Error, Result};
use crate::models::VelocityField;
use crate::par::{map_blocks, Execution};
use crate::points::Points;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Particles drawn from `μ₀` by the caller.
    pub particles: usize,
    pub steps: usize,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub sigma: f64,
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub execution: Execution,
}

fn one() -> f64 {
    1.0
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("simulation needs at least one step".into()));
        }
        if !(self.horizon > 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::Config(
                "horizon must be positive and sigma nonnegative".into(),
            ));
        }
        if self.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("snapshot times must be sorted".into()));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|t| !(0.0..=self.horizon).contains(*t))
        {
            return Err(Error::Range(format!(
                "snapshot time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Uniform grid with the snapshot times merged in.
    pub fn time_grid(&self) -> Vec<f64> {
        let dt = self.horizon / self.steps as f64;
        let mut grid: Vec<f64> = (0..=self.steps).map(|k| k as f64 * dt).collect();
        grid[self.steps] = self.horizon;
        let tol = 1e-12 * self.horizon;
        for &t in &self.snapshot_times {
            match grid.binary_search_by(|g| g.total_cmp(&t)) {
                Ok(_) => {}
                Err(i) => {
                    let near_left = i > 0 && (grid[i - 1] - t).abs() <= tol;
                    let near_right = i < grid.len() && (grid[i] - t).abs() <= tol;
                    if near_left {
                        grid[i - 1] = t;
                    } else if near_right {
                        grid[i] = t;
                    } else {
                        grid.insert(i, t);
                    }
                }
            }
        }
        grid
    }
}

/// Particle states at the requested times.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshots {
    pub times: Vec<f64>,
    pub states: Vec<Points>,
}

impl Snapshots {
    pub fn at(&self, t: f64) -> Option<&Points> {
        self.times
            .iter()
            .position(|s| (s - t).abs() < 1e-12)
            .map(|i| &self.states[i])
    }

    /// CSV with header `time,particle,x1,…,xd`; floats with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.states.first().map_or(0, |s| s.dim());
        let mut header = String::from("time,particle");
        for i in 1..=d {
            header.push_str(&format!(",x{i}"));
        }
        writeln!(out, "{header}")?;
        for (t, pts) in self.times.iter().zip(&self.states) {
            for (i, x) in pts.iter().enumerate() {
                write!(out, "{t:.16e},{i}")?;
                for v in x {
                    write!(out, ",{v:.16e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// `X_{k+1} = X_k + Δt_k·u(t_k, X_k)`.
pub fn simulate_ode<V: VelocityField + ?Sized>(
    field: &V,
    x0: &Points,
    config: &SimulationConfig,
) -> Result<Snapshots> {
    run(field, x0, config, 0.0, 0)
}

/// `X_{k+1} = X_k + Δt_k·u(t_k, X_k) + σ√Δt_k·ξ_k`.
pub fn simulate_sde<V: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &V,
    x0: &Points,
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<Snapshots> {
    let base = rng.gen::<u64>();
    run(field, x0, config, config.sigma, base)
}

fn run<V: VelocityField + ?Sized>(
    field: &V,
    x0: &Points,
    config: &SimulationConfig,
    sigma: f64,
    base_seed: u64,
) -> Result<Snapshots> {
    config.validate()?;
    if field.dim() != x0.dim() {
        return Err(Error::DimensionMismatch {
            expected: x0.dim(),
            got: field.dim(),
        });
    }
    if x0.is_empty() {
        return Err(Error::Empty("initial particles"));
    }
    let d = x0.dim();
    let grid = config.time_grid();
    let snap_steps: Vec<usize> = config
        .snapshot_times
        .iter()
        .map(|t| {
            grid.iter()
                .position(|g| g == t)
                .expect("snapshot time on grid")
        })
        .collect();
    let n = x0.len();
    let chunks = map_blocks(
        n,
        CHUNK,
        config.execution,
        |range| -> Result<Vec<Vec<f64>>> {
            let mut noise = rng::stream(
                base_seed,
                &[rng::stage::SIMULATION, (range.start / CHUNK) as u64],
            );
            let mut x = x0.as_slice()[range.start * d..range.end * d].to_vec();
            let mut u = vec![0.0; d];
            let mut snaps = vec![Vec::new(); snap_steps.len()];
            let mut next = 0;
            let mut record = |k: usize, x: &[f64], next: &mut usize| {
                while *next < snap_steps.len() && snap_steps[*next] == k {
                    snaps[*next] = x.to_vec();
                    *next += 1;
                }
            };
            record(0, &x, &mut next);
            for k in 0..grid.len() - 1 {
                let (t, dt) = (grid[k], grid[k + 1] - grid[k]);
                let scale = sigma * dt.sqrt();
                for (j, xi) in x.chunks_exact_mut(d).enumerate() {
                    field.velocity(t, xi, &mut u);
                    for c in 0..d {
                        xi[c] += dt * u[c];
                        if sigma > 0.0 {
                            let z: f64 = noise.sample(StandardNormal);
                            xi[c] += scale * z;
                        }
                    }
                    if xi.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Diverged {
                            step: k + 1,
                            particle: range.start + j,
                        });
                    }
                }
                record(k + 1, &x, &mut next);
            }
            Ok(snaps)
        },
    );
    let mut states = vec![Vec::with_capacity(n * d); snap_steps.len()];
    for chunk in chunks {
        for (s, part) in states.iter_mut().zip(chunk?) {
            s.extend(part);
        }
    }
    Ok(Snapshots {
        times: config.snapshot_times.clone(),
        states: states
            .into_iter()
            .map(|s| Points::new(d, s))
            .collect::<Result<_>>()?,
    })
}
