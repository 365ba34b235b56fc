//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use alltimeot::kernel::{apply_a, apply_aa, RadialKernel, SpaceTimePoint};
use alltimeot::penalty::{LossConfig, SampleBatch};
use std::io::Write;

/// Five-point central first and second derivatives of `g` at 0.
fn stencil(g: &dyn Fn(f64) -> f64, h: f64) -> (f64, f64) {
    let (p1, m1, p2, m2, c) = (g(h), g(-h), g(2.0 * h), g(-2.0 * h), g(0.0));
    let first = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    let second = (-p2 + 16.0 * p1 - 30.0 * c + 16.0 * m1 - m2) / (12.0 * h * h);
    (first, second)
}

/// `(∂_t + uᵀ∇_x + sΔ_x) f` at `(t, x)` by finite differences.
pub fn fd_generator(
    f: &dyn Fn(f64, &[f64]) -> f64,
    t: f64,
    x: &[f64],
    u: &[f64],
    s: f64,
    h: f64,
) -> f64 {
    let (dt, _) = stencil(&|e| f(t + e, x), h);
    let mut value = dt;
    for i in 0..x.len() {
        let (di, dii) = stencil(
            &|e| {
                let mut xe = x.to_vec();
                xe[i] += e;
                f(t, &xe)
            },
            h,
        );
        value += u[i] * di;
        if s > 0.0 {
            value += s * dii;
        }
    }
    value
}

/// Gaussian kernel on space-time points.
pub fn gauss(h: f64, t: f64, x: &[f64], t2: f64, x2: &[f64]) -> f64 {
    let r2 = (t - t2).powi(2) + x.iter().zip(x2).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (-0.5 * r2 / (h * h)).exp()
}

/// `𝒜ᵘ_y K(y2, y)` by finite differences in `y`.
#[allow(clippy::too_many_arguments)]
pub fn fd_apply_a(
    h: f64,
    u: &[f64],
    t: f64,
    x: &[f64],
    t2: f64,
    x2: &[f64],
    sigma: f64,
    step: f64,
) -> f64 {
    fd_generator(
        &|tt, xx| gauss(h, t2, x2, tt, xx),
        t,
        x,
        u,
        0.5 * sigma * sigma,
        step,
    )
}

/// `𝒜ᵘ_y 𝒜ᵘ′_{y′} K(y, y′)` by nested finite differences.
#[allow(clippy::too_many_arguments)]
pub fn fd_apply_aa(
    h: f64,
    u: &[f64],
    u2: &[f64],
    t: f64,
    x: &[f64],
    t2: f64,
    x2: &[f64],
    sigma: f64,
    step: f64,
) -> f64 {
    let s = 0.5 * sigma * sigma;
    let inner =
        |tt: f64, xx: &[f64]| fd_generator(&|t3, x3| gauss(h, tt, xx, t3, x3), t2, x2, u2, s, step);
    fd_generator(&inner, t, x, u, s, step)
}

/// The estimator written as plain nested loops over ordered pairs and
/// initial points.
pub fn naive_qhat(batch: &SampleBatch, drift: &[f64], cfg: &LossConfig) -> f64 {
    let d = batch.dim();
    let mn = batch.n_points();
    let big_t = cfg.horizon;
    let u = |p: usize| &drift[p * d..(p + 1) * d];
    let y = |p: usize| SpaceTimePoint::new(batch.time(p), batch.x(p));
    let mut bulk = 0.0;
    let mut cross = 0.0;
    let mut bound = 0.0;
    for p in 0..mn {
        for q in 0..mn {
            if p == q || (cfg.same_slice_mask && batch.slice_of(p) == batch.slice_of(q)) {
                continue;
            }
            let w = big_t - batch.time(p).max(batch.time(q));
            bulk += w * apply_aa(&cfg.kernel, u(p), u(q), y(p), y(q), cfg.sigma);
            if batch.time(p) <= batch.time(q) {
                cross += apply_a(&cfg.kernel, u(p), y(p), y(q), cfg.sigma);
            }
        }
        for z in batch.initial().iter() {
            let k = apply_a(
                &cfg.kernel,
                u(p),
                y(p),
                SpaceTimePoint::new(0.0, z),
                cfg.sigma,
            );
            bound += (big_t - batch.time(p)) * k;
        }
    }
    let n = mn as f64;
    let n0 = batch.n_initial() as f64;
    big_t * big_t / (n * n) * bulk + 2.0 * big_t / (n * n0) * bound
        - 2.0 * big_t * big_t / (n * n) * cross
}

/// `mean K(a,a) + mean K(b,b) − 2 mean K(a,b)` by direct double loops.
pub fn naive_mmd2(a: &[Vec<f64>], b: &[Vec<f64>], kernel: &RadialKernel) -> f64 {
    let mean = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut s = 0.0;
        for x in p {
            for y in q {
                s += kernel.eval(x, y);
            }
        }
        s / (p.len() * q.len()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

/// Writes a line straight to stderr so it shows up even when the test
/// harness captures output.
pub fn announce(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}
