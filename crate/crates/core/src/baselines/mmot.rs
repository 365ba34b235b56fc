use super::Snapshot;
use crate::error::{Error, Result};
use crate::models::VelocityField;
use crate::optim::{minimize_qn, QuasiNewtonConfig};
use crate::points::Points;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Affine maps `T_k(x) = A_k x + b_k` anchored at the snapshot times, with
/// `T_0 = id`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMapChain {
    pub times: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    steps: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl AffineMapChain {
    /// Builds the chain from `(K − 1)·(d² + d)` parameters (`A_k` row-major,
    /// then `b_k`, for `k = 1..K`).
    pub fn from_params(times: &[f64], d: usize, params: &[f64]) -> Result<Self> {
        let per = d * d + d;
        if times.len() < 2 || params.len() != (times.len() - 1) * per {
            return Err(Error::Contract(
                "parameter count does not match the chain".into(),
            ));
        }
        let mut a = vec![DMatrix::identity(d, d)];
        let mut b = vec![DVector::zeros(d)];
        for chunk in params.chunks_exact(per) {
            a.push(DMatrix::from_row_slice(d, d, &chunk[..d * d]));
            b.push(DVector::from_column_slice(&chunk[d * d..]));
        }
        let mut steps = Vec::with_capacity(times.len() - 1);
        for k in 1..times.len() {
            let inv = a[k - 1]
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NonFinite(format!("map {} is singular", k - 1)))?;
            let m = &a[k] * inv;
            let c = &b[k] - &m * &b[k - 1];
            steps.push((m, c));
        }
        Ok(Self {
            times: times.to_vec(),
            a,
            b,
            steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.b[0].len()
    }

    /// `T_k(x)`.
    pub fn apply(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let v = &self.a[k] * DVector::from_column_slice(x) + &self.b[k];
        v.iter().copied().collect()
    }
}

impl VelocityField for AffineMapChain {
    fn dim(&self) -> usize {
        self.b[0].len()
    }

    /// Finite-difference drift `(T_k ∘ T_{k−1}⁻¹(x) − x)/Δt_k` on `[t_{k−1}, t_k)`.
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let k = self
            .times
            .partition_point(|s| *s <= t)
            .clamp(1, self.times.len() - 1);
        let dt = self.times[k] - self.times[k - 1];
        let (m, c) = &self.steps[k - 1];
        let d = x.len();
        for i in 0..d {
            let mut v = c[i] - x[i];
            for j in 0..d {
                v += m[(i, j)] * x[j];
            }
            out[i] = v / dt;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmotConfig {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub inits: usize,
    /// Base kernel bandwidth `h`; the penalty uses `α·h`.
    pub bandwidth: f64,
    pub optimizer: QuasiNewtonConfig,
}

impl Default for MmotConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1e3, 1e4, 1e5],
            alphas: vec![0.5, 1.0, 2.0],
            inits: 3,
            bandwidth: 1.0,
            optimizer: QuasiNewtonConfig {
                restarts: 1,
                max_iter: 300,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmotCell {
    pub lambda: f64,
    pub alpha: f64,
    pub init: usize,
    pub objective: f64,
    pub score: f64,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MmotFit {
    pub best: AffineMapChain,
    pub best_cell: usize,
    pub cells: Vec<MmotCell>,
    /// `(λ, α, init, message)` for cells whose optimization failed.
    pub failures: Vec<(f64, f64, usize, String)>,
}

struct Objective<'a> {
    x0: &'a Points,
    targets: Vec<&'a Points>,
    target_self: Vec<f64>,
    dts: Vec<f64>,
    lambda: f64,
    inv_s2: f64,
}

impl Objective<'_> {
    fn kern(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-0.5 * r2 * self.inv_s2).exp()
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let d = self.x0.dim();
        let n = self.x0.len();
        let per = d * d + d;
        let k_maps = self.targets.len();
        let push = |k: usize| -> Vec<f64> {
            if k == 0 {
                return self.x0.as_slice().to_vec();
            }
            let p = &params[(k - 1) * per..k * per];
            let mut y = Vec::with_capacity(n * d);
            for x in self.x0.iter() {
                for i in 0..d {
                    y.push(p[d * d + i] + (0..d).map(|j| p[i * d + j] * x[j]).sum::<f64>());
                }
            }
            y
        };
        let ys: Vec<Vec<f64>> = (0..=k_maps).map(push).collect();
        let mut value = 0.0;
        let mut gy: Vec<Vec<f64>> = vec![vec![0.0; n * d]; k_maps + 1];
        let nf = n as f64;
        for k in 1..=k_maps {
            let dt = self.dts[k - 1];
            for idx in 0..n * d {
                let diff = ys[k][idx] - ys[k - 1][idx];
                value += diff * diff / (nf * dt);
                gy[k][idx] += 2.0 * diff / (nf * dt);
                gy[k - 1][idx] -= 2.0 * diff / (nf * dt);
            }
            let z = self.targets[k - 1];
            let m = z.len() as f64;
            let y = &ys[k];
            let (mut syy, mut syz) = (0.0, 0.0);
            for i in 0..n {
                let yi = &y[i * d..(i + 1) * d];
                for j in 0..n {
                    let yj = &y[j * d..(j + 1) * d];
                    let kv = self.kern(yi, yj);
                    syy += kv;
                    for c in 0..d {
                        gy[k][i * d + c] -=
                            self.lambda * 2.0 / (nf * nf) * (yi[c] - yj[c]) * self.inv_s2 * kv;
                    }
                }
                for zj in z.iter() {
                    let kv = self.kern(yi, zj);
                    syz += kv;
                    for c in 0..d {
                        gy[k][i * d + c] +=
                            self.lambda * 2.0 / (nf * m) * (yi[c] - zj[c]) * self.inv_s2 * kv;
                    }
                }
            }
            value +=
                self.lambda * (syy / (nf * nf) - 2.0 * syz / (nf * m) + self.target_self[k - 1]);
        }
        let mut grad = vec![0.0; k_maps * per];
        for k in 1..=k_maps {
            let g = &mut grad[(k - 1) * per..k * per];
            for (x, gi) in self.x0.iter().zip(gy[k].chunks_exact(d)) {
                for i in 0..d {
                    for j in 0..d {
                        g[i * d + j] += gi[i] * x[j];
                    }
                    g[d * d + i] += gi[i];
                }
            }
        }
        (value, grad)
    }
}

/// Fits the affine chain on every `(λ_m, α, init)` cell and keeps the cell
/// with the lowest `score`. The first init starts from the identity; the
/// others perturb it with `A += U(−¼, ¼)`, `b += U(−½, ½)`.
pub fn mmot_affine_fit<R, S>(
    snapshots: &[Snapshot],
    config: &MmotConfig,
    rng: &mut R,
    score: S,
) -> Result<MmotFit>
where
    R: Rng + ?Sized,
    S: Fn(&AffineMapChain) -> f64,
{
    if snapshots.len() < 2 {
        return Err(Error::Contract("MMOT needs at least two snapshots".into()));
    }
    if snapshots[0].t != 0.0 {
        return Err(Error::Contract(
            "the first snapshot must be at t = 0".into(),
        ));
    }
    if config.lambdas.is_empty() || config.alphas.is_empty() || config.inits == 0 {
        return Err(Error::Config("empty MMOT grid".into()));
    }
    let d = snapshots[0].points.dim();
    let times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
    let dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if dts.iter().any(|dt| !(*dt > 0.0)) {
        return Err(Error::Config(
            "snapshot times must be strictly increasing".into(),
        ));
    }
    let per = d * d + d;
    let n_maps = snapshots.len() - 1;
    let mut identity = Vec::with_capacity(n_maps * per);
    for _ in 0..n_maps {
        for i in 0..d {
            for j in 0..d {
                identity.push(if i == j { 1.0 } else { 0.0 });
            }
        }
        identity.extend(std::iter::repeat_n(0.0, d));
    }
    let starts: Vec<Vec<f64>> = (0..config.inits)
        .map(|k| {
            if k == 0 {
                return identity.clone();
            }
            identity
                .chunks_exact(per)
                .flat_map(|c| {
                    let mut c = c.to_vec();
                    c[..d * d]
                        .iter_mut()
                        .for_each(|v| *v += rng.gen_range(-0.25..0.25));
                    c[d * d..]
                        .iter_mut()
                        .for_each(|v| *v += rng.gen_range(-0.5..0.5));
                    c
                })
                .collect()
        })
        .collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &lambda in &config.lambdas {
        for &alpha in &config.alphas {
            let s = alpha * config.bandwidth;
            let inv_s2 = 1.0 / (s * s);
            let targets: Vec<&Points> = snapshots[1..].iter().map(|s| &s.points).collect();
            let target_self = targets
                .iter()
                .map(|z| {
                    let mut acc = 0.0;
                    for a in z.iter() {
                        for b in z.iter() {
                            let r2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                            acc += (-0.5 * r2 * inv_s2).exp();
                        }
                    }
                    acc / (z.len() * z.len()) as f64
                })
                .collect();
            let obj = Objective {
                x0: &snapshots[0].points,
                targets,
                target_self,
                dts: dts.clone(),
                lambda,
                inv_s2,
            };
            for (init, w0) in starts.iter().enumerate() {
                let run = minimize_qn(|w| Ok(obj.eval(w)), w0, &config.optimizer)
                    .and_then(|r| Ok((AffineMapChain::from_params(&times, d, &r.params)?, r)));
                match run {
                    Ok((chain, r)) => cells.push(MmotCell {
                        lambda,
                        alpha,
                        init,
                        objective: r.loss,
                        score: score(&chain),
                        params: r.params,
                    }),
                    Err(e) => failures.push((lambda, alpha, init, e.to_string())),
                }
            }
        }
    }
    let best_cell = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.score.is_finite())
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Optimizer("every MMOT grid cell failed".into()))?;
    let best = AffineMapChain::from_params(&times, d, &cells[best_cell].params)?;
    Ok(MmotFit {
        best,
        best_cell,
        cells,
        failures,
    })
}
