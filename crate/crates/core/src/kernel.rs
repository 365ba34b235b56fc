//! Radial kernels on space-time and closed-form applications of the
//! generator `𝒜ᵘ = ∂_t + uᵀ∇_x + (σ²/2)Δ_x` to them.
//!
//! A radial kernel `K(y, y') = φ(|y − y'|)` on ℝ^{d+1} is described by its
//! derivative ladder `φ_{k+1}(r) = φ_k′(r)/r`. Every operator formula below
//! is a polynomial in the ladder values, the space-time offset
//! `z = y − y'` and the lifted drifts `ũ = (1, u)`.
//!
//! # Double application for σ > 0
//!
//! Write `s = σ²/2`, `D = ũᵀ∇_y`, `D′ = ũ′ᵀ∇_{y′}`, `L = Δ_x`, and
//! `f(z) = φ(|z|)`. Because `∇_{y′} = −∇_z` and `L` has constant
//! coefficients,
//!
//! ```text
//! 𝒜ᵘ_y 𝒜ᵘ′_{y′} K = −(ũᵀ∇)(ũ′ᵀ∇) f + s (ũ − ũ′)ᵀ∇(L f) + s² L² f.
//! ```
//!
//! With `ρ = |z_x|²`, `∇f = φ₁ z` and `∂_i∂_j f = φ₁ δ_ij + φ₂ z_i z_j`:
//!
//! * `−(ũᵀ∇)(ũ′ᵀ∇) f = −φ₁ ũᵀũ′ − φ₂ (ũᵀz)(ũ′ᵀz)`
//! * `L f = d φ₁ + ρ φ₂`, so `∇(L f) = (d φ₂ + ρ φ₃) z + 2 φ₂ (0, z_x)` and,
//!   since `ũ − ũ′ = (0, u − u′)`,
//!   `(ũ − ũ′)ᵀ∇(L f) = (u − u′)ᵀ z_x · [(d + 2) φ₂ + ρ φ₃]`
//! * `L² f = d(d + 2) φ₂ + 2(d + 2) ρ φ₃ + ρ² φ₄`
//!
//! The first bullet is the σ = 0 formula; the other two are the stochastic
//! corrections. The expression is checked against nested finite differences
//! in the tests below and in the acceptance suite.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[non_exhaustive]
pub enum KernelProfile {
    Gaussian,
}

/// Isotropic radial kernel with bandwidth `h > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub struct RadialKernel {
    profile: KernelProfile,
    bandwidth: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    profile: KernelProfile,
    bandwidth: f64,
}

impl TryFrom<RawKernel> for RadialKernel {
    type Error = Error;
    fn try_from(raw: RawKernel) -> Result<Self> {
        RadialKernel::new(raw.profile, raw.bandwidth)
    }
}

impl From<RadialKernel> for RawKernel {
    fn from(k: RadialKernel) -> Self {
        RawKernel {
            profile: k.profile,
            bandwidth: k.bandwidth,
        }
    }
}

impl Default for RadialKernel {
    fn default() -> Self {
        Self {
            profile: KernelProfile::Gaussian,
            bandwidth: 1.0,
        }
    }
}

/// How many rungs of the ladder to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderOrder {
    /// φ, φ₁, φ₂: enough for σ = 0.
    Second,
    /// φ … φ₄: required whenever σ > 0.
    Fourth,
}

/// Values of φ and its radial derivative ladder at one radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiLadder {
    pub phi: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `NaN` when computed to [`LadderOrder::Second`].
    pub phi3: f64,
    /// `NaN` when computed to [`LadderOrder::Second`].
    pub phi4: f64,
    pub order: LadderOrder,
}

/// A space-time point `y = (t, x)`.
#[derive(Clone, Copy, Debug)]
pub struct SpaceTimePoint<'a> {
    pub t: f64,
    pub x: &'a [f64],
}

impl<'a> SpaceTimePoint<'a> {
    pub fn new(t: f64, x: &'a [f64]) -> Self {
        Self { t, x }
    }
}

impl RadialKernel {
    pub fn new(profile: KernelProfile, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { profile, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelProfile::Gaussian, bandwidth)
    }

    pub fn profile(&self) -> KernelProfile {
        self.profile
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `φ` as a function of the squared radius.
    #[inline]
    pub fn phi_sq(&self, r2: f64) -> f64 {
        match self.profile {
            KernelProfile::Gaussian => (-0.5 * r2 / (self.bandwidth * self.bandwidth)).exp(),
        }
    }

    /// `K(a, b)` for two points of equal dimension.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.phi_sq(sq_dist(a, b))
    }

    /// Ladder at squared radius `r2`. Closed forms only; never divides by `r`.
    #[inline]
    pub fn ladder_sq(&self, r2: f64, order: LadderOrder) -> PhiLadder {
        match self.profile {
            KernelProfile::Gaussian => {
                let a = 1.0 / (self.bandwidth * self.bandwidth);
                let phi = (-0.5 * a * r2).exp();
                let phi1 = -a * phi;
                let phi2 = a * a * phi;
                let (phi3, phi4) = match order {
                    LadderOrder::Second => (f64::NAN, f64::NAN),
                    LadderOrder::Fourth => (-a * a * a * phi, a * a * a * a * phi),
                };
                PhiLadder {
                    phi,
                    phi1,
                    phi2,
                    phi3,
                    phi4,
                    order,
                }
            }
        }
    }
}

/// Ladder values at radius `r ≥ 0`.
pub fn phi_ladder(r: f64, kernel: &RadialKernel, order: LadderOrder) -> Result<PhiLadder> {
    if !(r >= 0.0) {
        return Err(Error::Range(format!("radius must be nonnegative, got {r}")));
    }
    Ok(kernel.ladder_sq(r * r, order))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geometry of the offset `z = y − y2` shared by all formulas.
struct Offset {
    dt: f64,
    /// `|z_x|²`
    rho: f64,
    /// `uᵀ z_x`
    u_dx: f64,
}

fn offset(u: &[f64], y: SpaceTimePoint<'_>, y2: SpaceTimePoint<'_>) -> Offset {
    let mut rho = 0.0;
    let mut u_dx = 0.0;
    for ((xi, x2i), ui) in y.x.iter().zip(y2.x).zip(u) {
        let dx = xi - x2i;
        rho += dx * dx;
        u_dx += ui * dx;
    }
    Offset {
        dt: y.t - y2.t,
        rho,
        u_dx,
    }
}

/// `𝒜ᵘ_y K(y2, y)`: the generator with drift `u = u(y)` applied in the
/// second argument of the kernel.
pub fn apply_a(
    kernel: &RadialKernel,
    u: &[f64],
    y: SpaceTimePoint<'_>,
    y2: SpaceTimePoint<'_>,
    sigma: f64,
) -> f64 {
    let o = offset(u, y, y2);
    let r2 = o.dt * o.dt + o.rho;
    let ladder = kernel.ladder_sq(r2, LadderOrder::Second);
    let tau = o.dt + o.u_dx;
    let mut value = ladder.phi1 * tau;
    if sigma > 0.0 {
        let s = 0.5 * sigma * sigma;
        let d = y.x.len() as f64;
        value += s * (d * ladder.phi1 + o.rho * ladder.phi2);
    }
    value
}

/// `𝒜ᵘ_y 𝒜ᵘ′_{y′} K(y, y′)` given a precomputed ladder at `|y − y2|`.
///
/// Fails when `sigma > 0` and the ladder only reaches second order.
pub fn apply_aa_with_ladder(
    ladder: &PhiLadder,
    u: &[f64],
    u2: &[f64],
    y: SpaceTimePoint<'_>,
    y2: SpaceTimePoint<'_>,
    sigma: f64,
) -> Result<f64> {
    if sigma > 0.0 && ladder.order != LadderOrder::Fourth {
        return Err(Error::Config(
            "σ > 0 needs the derivative ladder to fourth order".into(),
        ));
    }
    let o = offset(u, y, y2);
    let o2 = offset(u2, y, y2);
    let tau = o.dt + o.u_dx;
    let tau2 = o.dt + o2.u_dx;
    let mut value = -ladder.phi2 * tau * tau2 - ladder.phi1 * (1.0 + dot(u, u2));
    if sigma > 0.0 {
        let s = 0.5 * sigma * sigma;
        let d = y.x.len() as f64;
        let rho = o.rho;
        let c1 = (d + 2.0) * ladder.phi2 + rho * ladder.phi3;
        let c2 = d * (d + 2.0) * ladder.phi2
            + 2.0 * (d + 2.0) * rho * ladder.phi3
            + rho * rho * ladder.phi4;
        value += s * (o.u_dx - o2.u_dx) * c1 + s * s * c2;
    }
    Ok(value)
}

/// `𝒜ᵘ_y 𝒜ᵘ′_{y′} K(y, y′)` for any σ ≥ 0 using the generic ladder path.
pub fn apply_aa(
    kernel: &RadialKernel,
    u: &[f64],
    u2: &[f64],
    y: SpaceTimePoint<'_>,
    y2: SpaceTimePoint<'_>,
    sigma: f64,
) -> f64 {
    let order = if sigma > 0.0 {
        LadderOrder::Fourth
    } else {
        LadderOrder::Second
    };
    let dt = y.t - y2.t;
    let r2 = dt * dt + sq_dist(y.x, y2.x);
    let ladder = kernel.ladder_sq(r2, order);
    apply_aa_with_ladder(&ladder, u, u2, y, y2, sigma).expect("ladder order matches sigma")
}

/// Gaussian σ = 0 form `[−a²ττ′ + a(1 + uᵀu′)] K(y, y′)` with `a = 1/h²`.
/// Hot path for deterministic problems.
#[inline]
pub fn apply_aa_gaussian_fast(
    kernel: &RadialKernel,
    u: &[f64],
    u2: &[f64],
    y: SpaceTimePoint<'_>,
    y2: SpaceTimePoint<'_>,
) -> f64 {
    match kernel.profile {
        KernelProfile::Gaussian => {
            let a = 1.0 / (kernel.bandwidth * kernel.bandwidth);
            let dt = y.t - y2.t;
            let mut rho = 0.0;
            let mut tau = dt;
            let mut tau2 = dt;
            let mut uu = 0.0;
            for i in 0..y.x.len() {
                let dx = y.x[i] - y2.x[i];
                rho += dx * dx;
                tau += u[i] * dx;
                tau2 += u2[i] * dx;
                uu += u[i] * u2[i];
            }
            let k = (-0.5 * a * (dt * dt + rho)).exp();
            (-a * a * tau * tau2 + a * (1.0 + uu)) * k
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn k1() -> RadialKernel {
        RadialKernel::gaussian(1.0).unwrap()
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(RadialKernel::gaussian(0.0).is_err());
        assert!(RadialKernel::gaussian(-1.0).is_err());
        assert!(RadialKernel::gaussian(f64::NAN).is_err());
        let bad: std::result::Result<RadialKernel, _> =
            serde_json::from_str(r#"{"profile":"gaussian","bandwidth":-2.0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn self_similarity_is_one() {
        let k = RadialKernel::gaussian(0.7).unwrap();
        assert_eq!(k.eval(&[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0]), 1.0);
    }

    #[test]
    fn ladder_at_origin() {
        let l = phi_ladder(0.0, &k1(), LadderOrder::Fourth).unwrap();
        assert_eq!((l.phi, l.phi1, l.phi2), (1.0, -1.0, 1.0));
        assert_eq!((l.phi3, l.phi4), (-1.0, 1.0));
    }

    #[test]
    fn ladder_at_unit_radius() {
        let l = phi_ladder(1.0, &k1(), LadderOrder::Second).unwrap();
        assert!((l.phi - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!((l.phi1 + 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!(l.phi3.is_nan());
    }

    #[test]
    fn ladder_proportionality() {
        for &h in &[0.3, 1.0, 2.5] {
            let k = RadialKernel::gaussian(h).unwrap();
            for &r in &[0.0, 0.4, 1.7, 5.0] {
                let l = phi_ladder(r, &k, LadderOrder::Fourth).unwrap();
                assert!((l.phi2 * h.powi(4) - l.phi).abs() <= 1e-14 * l.phi.max(1e-300));
                assert!((l.phi4 * h.powi(8) - l.phi).abs() <= 1e-13 * l.phi.max(1e-300));
            }
        }
        assert!(phi_ladder(-0.1, &k1(), LadderOrder::Second).is_err());
    }

    #[test]
    fn ladder_recursion_by_numeric_differentiation() {
        let k = RadialKernel::gaussian(1.3).unwrap();
        let rung = |r: f64, i: usize| {
            let l = phi_ladder(r, &k, LadderOrder::Fourth).unwrap();
            [l.phi, l.phi1, l.phi2, l.phi3, l.phi4][i]
        };
        let step = 1e-5;
        for i in 0..40 {
            let r = 0.1 + 4.9 * i as f64 / 39.0;
            for k in 0..4 {
                let deriv = (rung(r + step, k) - rung(r - step, k)) / (2.0 * step);
                let expected = rung(r, k + 1);
                assert!(
                    ((deriv / r) - expected).abs() <= 1e-6 * expected.abs(),
                    "rung {k} at r={r}"
                );
            }
        }
    }

    #[test]
    fn single_operator_examples() {
        let zero = [0.0];
        assert_eq!(
            apply_a(
                &k1(),
                &zero,
                SpaceTimePoint::new(0.2, &[0.5]),
                SpaceTimePoint::new(0.2, &[0.5]),
                0.0
            ),
            0.0
        );
        let v = apply_a(
            &k1(),
            &[2.0],
            SpaceTimePoint::new(0.0, &[0.0]),
            SpaceTimePoint::new(0.0, &[1.0]),
            0.0,
        );
        assert!((v - 1.213_061_319_425_266_8).abs() < 1e-12, "{v}");
        for &sigma in &[0.5, 1.0, 2.0] {
            let v = apply_a(
                &k1(),
                &zero,
                SpaceTimePoint::new(0.0, &[0.0]),
                SpaceTimePoint::new(0.0, &[0.0]),
                sigma,
            );
            assert!((v + 0.5 * sigma * sigma).abs() < 1e-15);
        }
    }

    #[test]
    fn double_operator_examples() {
        let y = SpaceTimePoint::new(0.0, &[0.0]);
        for d in 1..4 {
            let x = vec![0.25; d];
            let zero = vec![0.0; d];
            let p = SpaceTimePoint::new(0.4, &x);
            assert!((apply_aa(&k1(), &zero, &zero, p, p, 0.0) - 1.0).abs() < 1e-15);
        }
        assert!((apply_aa(&k1(), &[2.0], &[2.0], y, y, 0.0) - 5.0).abs() < 1e-14);
        let y2 = SpaceTimePoint::new(0.0, &[1.0]);
        let fast = apply_aa_gaussian_fast(&k1(), &[2.0], &[2.0], y, y2);
        assert!((fast - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert!((apply_aa_gaussian_fast(&k1(), &[0.0], &[0.0], y, y) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_order_ladder_rejected_for_sigma() {
        let l = k1().ladder_sq(0.3, LadderOrder::Second);
        let y = SpaceTimePoint::new(0.0, &[0.0]);
        assert!(apply_aa_with_ladder(&l, &[1.0], &[1.0], y, y, 1.0).is_err());
        assert!(apply_aa_with_ladder(&l, &[1.0], &[1.0], y, y, 0.0).is_ok());
    }

    #[test]
    fn symmetry_in_both_regimes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let k = RadialKernel::gaussian(0.8).unwrap();
        for _ in 0..200 {
            let d = rng.gen_range(1..4);
            let mut v = || {
                (0..d)
                    .map(|_| rng.gen_range(-2.0..2.0))
                    .collect::<Vec<f64>>()
            };
            let (u, u2, x, x2) = (v(), v(), v(), v());
            let (t, t2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            for &sigma in &[0.0, 1.0] {
                let a = apply_aa(
                    &k,
                    &u,
                    &u2,
                    SpaceTimePoint::new(t, &x),
                    SpaceTimePoint::new(t2, &x2),
                    sigma,
                );
                let b = apply_aa(
                    &k,
                    &u2,
                    &u,
                    SpaceTimePoint::new(t2, &x2),
                    SpaceTimePoint::new(t, &x),
                    sigma,
                );
                assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
            }
        }
    }
}
