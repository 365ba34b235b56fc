//! Distributional and pointwise evaluation metrics.

use crate::error::{Error, Result};
use crate::kernel::RadialKernel;
use crate::models::VelocityField;
use crate::par::{map_blocks, map_indexed, Execution};
use crate::points::Points;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// Order statistics of `s` (sorted, length `N`) resampled to `n ≤ N` values
/// at plotting positions `(i + ½)/n`, linearly interpolated.
fn quantiles_to(s: &[f64], n: usize) -> Vec<f64> {
    let big = s.len();
    (0..n)
        .map(|i| {
            let pos = ((i as f64 + 0.5) / n as f64 * big as f64 - 0.5).clamp(0.0, (big - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(big - 1);
            let frac = pos - lo as f64;
            s[lo] + frac * (s[hi] - s[lo])
        })
        .collect()
}

/// Exact 1-d Wasserstein-2 between empirical measures via sorted pairing.
/// Samples of different size are reduced to the smaller size by quantile
/// interpolation first.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("w2 sample"));
    }
    let (mut sa, mut sb) = (sorted(a), sorted(b));
    if sa.len() > sb.len() {
        sa = quantiles_to(&sa, sb.len());
    } else if sb.len() > sa.len() {
        sb = quantiles_to(&sb, sa.len());
    }
    let sum: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / sa.len() as f64).sqrt())
}

/// Root-mean of squared 1-d W₂ along `n_projections` random unit directions.
/// In `d = 1` this is exactly [`w2_1d`].
pub fn sliced_w2<R: Rng + ?Sized>(
    a: &Points,
    b: &Points,
    n_projections: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.dim() == 1 {
        return w2_1d(a.as_slice(), b.as_slice());
    }
    if n_projections == 0 {
        return Err(Error::Config(
            "sliced W2 needs at least one projection".into(),
        ));
    }
    let d = a.dim();
    let dirs: Vec<Vec<f64>> = (0..n_projections)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let sq = map_indexed(n_projections, exec, |k| {
        w2_1d(&a.project(&dirs[k]), &b.project(&dirs[k])).map(|w| w * w)
    });
    let mut total = 0.0;
    for s in sq {
        total += s?;
    }
    Ok((total / n_projections as f64).sqrt())
}

fn mean_kernel(a: &Points, b: &Points, kernel: &RadialKernel, exec: Execution) -> f64 {
    let rows = map_blocks(a.len(), 64, exec, |range| {
        let mut s = 0.0;
        for i in range {
            let x = a.get(i);
            let mut row = 0.0;
            for y in b.iter() {
                row += kernel.eval(x, y);
            }
            s += row;
        }
        s
    });
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Biased V-statistic MMD, square-rooted and clamped at zero.
pub fn mmd(a: &Points, b: &Points, kernel: &RadialKernel, exec: Execution) -> Result<f64> {
    Ok(mmd_squared(a, b, kernel, exec)?.max(0.0).sqrt())
}

/// `mean K(a,a) + mean K(b,b) − 2 mean K(a,b)`.
pub fn mmd_squared(a: &Points, b: &Points, kernel: &RadialKernel, exec: Execution) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mmd sample"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(
        mean_kernel(a, a, kernel, exec) + mean_kernel(b, b, kernel, exec)
            - 2.0 * mean_kernel(a, b, kernel, exec),
    )
}

/// Where drift errors are measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftEvaluation {
    /// Tensor grid: `n_t` times in `[t0, t1]`, `n_x` points per spatial axis.
    Grid {
        t_range: (f64, f64),
        x_ranges: Vec<(f64, f64)>,
        #[serde(default = "default_nt")]
        n_t: usize,
        #[serde(default = "default_nx")]
        n_x: usize,
    },
    /// `n_points` uniform draws in the box at each of `n_t` equally spaced times.
    MonteCarlo {
        t_range: (f64, f64),
        x_ranges: Vec<(f64, f64)>,
        #[serde(default = "default_mc_nt")]
        n_t: usize,
        #[serde(default = "default_mc_n")]
        n_points: usize,
    },
}

fn default_nt() -> usize {
    41
}
fn default_nx() -> usize {
    81
}
fn default_mc_nt() -> usize {
    15
}
fn default_mc_n() -> usize {
    2000
}

impl DriftEvaluation {
    /// 41 × 81ᵈ grid on `[0, 1] × ∏ x_ranges`.
    pub fn grid(x_ranges: Vec<(f64, f64)>) -> Self {
        DriftEvaluation::Grid {
            t_range: (0.0, 1.0),
            x_ranges,
            n_t: default_nt(),
            n_x: default_nx(),
        }
    }

    pub fn monte_carlo(x_ranges: Vec<(f64, f64)>) -> Self {
        DriftEvaluation::MonteCarlo {
            t_range: (0.0, 1.0),
            x_ranges,
            n_t: default_mc_nt(),
            n_points: default_mc_n(),
        }
    }

    fn parts(&self) -> ((f64, f64), &[(f64, f64)], usize) {
        match self {
            DriftEvaluation::Grid {
                t_range,
                x_ranges,
                n_t,
                ..
            }
            | DriftEvaluation::MonteCarlo {
                t_range,
                x_ranges,
                n_t,
                ..
            } => (*t_range, x_ranges, *n_t),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMse {
    /// Mean of `|û − u*|²`.
    pub total: f64,
    /// `total / d`.
    pub per_component: f64,
    /// Mean of `(û_i − u*_i)²` for each output `i`.
    pub components: Vec<f64>,
}

/// Mean squared drift error over an evaluation region.
pub fn drift_grid_mse<A, B, R>(
    model: &A,
    truth: &B,
    spec: &DriftEvaluation,
    rng: &mut R,
    exec: Execution,
) -> Result<DriftMse>
where
    A: VelocityField + ?Sized,
    B: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    let d = truth.dim();
    if model.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: model.dim(),
        });
    }
    let (t_range, x_ranges, n_t) = spec.parts();
    if x_ranges.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x_ranges.len(),
        });
    }
    if n_t == 0 || !(t_range.1 >= t_range.0) || x_ranges.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::Config("degenerate drift evaluation region".into()));
    }
    let times = linspace(t_range.0, t_range.1, n_t);
    let points: Points = match spec {
        DriftEvaluation::Grid { n_x, .. } => {
            if *n_x == 0 {
                return Err(Error::Config("degenerate drift evaluation region".into()));
            }
            let axes: Vec<Vec<f64>> = x_ranges
                .iter()
                .map(|(lo, hi)| linspace(*lo, *hi, *n_x))
                .collect();
            let total = n_x
                .checked_pow(d as u32)
                .ok_or_else(|| Error::Config("grid too large".into()))?;
            let mut data = Vec::with_capacity(total * d);
            for mut idx in 0..total {
                for axis in &axes {
                    data.push(axis[idx % n_x]);
                    idx /= n_x;
                }
            }
            Points::new(d, data)?
        }
        DriftEvaluation::MonteCarlo { n_points, .. } => {
            if *n_points == 0 {
                return Err(Error::Config("degenerate drift evaluation region".into()));
            }
            let mut data = Vec::with_capacity(n_t * n_points * d);
            for _ in 0..n_t * n_points {
                for (lo, hi) in x_ranges {
                    data.push(rng.gen_range(*lo..*hi));
                }
            }
            Points::new(d, data)?
        }
    };
    let per_time = points.len()
        / if matches!(spec, DriftEvaluation::MonteCarlo { .. }) {
            n_t
        } else {
            1
        };
    let shared = matches!(spec, DriftEvaluation::Grid { .. });
    let sums = map_indexed(n_t, exec, |k| {
        let t = times[k];
        let (u, v) = (&mut vec![0.0; d], &mut vec![0.0; d]);
        let mut acc = vec![0.0; d];
        let range = if shared {
            0..points.len()
        } else {
            k * per_time..(k + 1) * per_time
        };
        for p in range {
            let x = points.get(p);
            model.velocity(t, x, u);
            truth.velocity(t, x, v);
            for i in 0..d {
                acc[i] += (u[i] - v[i]).powi(2);
            }
        }
        acc
    });
    let n_eval = (n_t * per_time) as f64;
    let mut components = vec![0.0; d];
    for s in sums {
        components.iter_mut().zip(s).for_each(|(c, v)| *c += v);
    }
    components.iter_mut().for_each(|c| *c /= n_eval);
    let total: f64 = components.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("drift MSE".into()));
    }
    Ok(DriftMse {
        total,
        per_component: total / d as f64,
        components,
    })
}

/// Metrics between a simulated and a reference marginal at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub t: f64,
    /// Exact W₂; only defined in `d = 1`.
    pub w2: Option<f64>,
    pub sw2: f64,
    pub mmd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MarginalRow>,
    pub mean_w2: Option<f64>,
    pub max_w2: Option<f64>,
    pub mean_sw2: f64,
    pub max_sw2: f64,
    pub mean_mmd: f64,
    pub max_mmd: f64,
    pub drift: Option<DriftMse>,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MarginalRow>, drift: Option<DriftMse>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&MarginalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let max = |f: &dyn Fn(&MarginalRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
        let has_w2 = !rows.is_empty() && rows.iter().all(|r| r.w2.is_some());
        Self {
            mean_w2: has_w2.then(|| mean(&|r| r.w2.unwrap())),
            max_w2: has_w2.then(|| max(&|r| r.w2.unwrap())),
            mean_sw2: mean(&|r| r.sw2),
            max_sw2: max(&|r| r.sw2),
            mean_mmd: mean(&|r| r.mmd),
            max_mmd: max(&|r| r.mmd),
            rows,
            drift,
        }
    }
}

/// All marginal metrics between `sim` and `reference`.
pub fn marginal_row<R: Rng + ?Sized>(
    t: f64,
    sim: &Points,
    reference: &Points,
    kernel: &RadialKernel,
    projections: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<MarginalRow> {
    let sw2 = sliced_w2(sim, reference, projections, rng, exec)?;
    let w2 = (sim.dim() == 1).then_some(sw2);
    Ok(MarginalRow {
        t,
        w2,
        sw2,
        mmd: mmd(sim, reference, kernel, exec)?,
    })
}

/// Metrics between two random halves of `sample`.
pub fn mc_floor<R: Rng + ?Sized>(
    t: f64,
    sample: &Points,
    kernel: &RadialKernel,
    projections: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<MetricReport> {
    if sample.len() < 4 {
        return Err(Error::Contract(
            "Monte-Carlo floor needs at least four points".into(),
        ));
    }
    let d = sample.dim();
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    idx.shuffle(rng);
    let half = sample.len() / 2;
    let gather = |ids: &[usize]| {
        Points::new(
            d,
            ids.iter().flat_map(|&i| sample.get(i).to_vec()).collect(),
        )
    };
    let (a, b) = (gather(&idx[..half])?, gather(&idx[half..2 * half])?);
    let row = marginal_row(t, &a, &b, kernel, projections, rng, exec)?;
    Ok(MetricReport::from_rows(vec![row], None))
}
