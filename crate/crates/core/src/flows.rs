//! Synthetic marginal families `μ_t` with samplers, densities and the known
//! optimal drift.
//!
//! All families are written in normalized time `s = t/T`; drifts pick up the
//! corresponding `1/T` factor so that every kind is valid for any horizon.

use crate::error::{Error, Result};
use crate::models::VelocityField;
use crate::points::Points;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FlowKind {
    /// `N(−1 + 2s, 1)`.
    #[serde(rename = "gauss_translate_1d")]
    GaussTranslate1d,
    /// `N(2 sin(πs), 1)`.
    #[serde(rename = "roundtrip_1d")]
    Roundtrip1d,
    /// `½N(−2 + 2s, 1) + ½N(2 − 2s, 1)`.
    #[serde(rename = "bimodal_merge_1d")]
    BimodalMerge1d,
    /// `N((−1 + 2s, s/2), I₂)`.
    #[serde(rename = "gauss_translate_2d")]
    GaussTranslate2d,
    /// Bimodal merge in `x₁` times a standard normal in `x₂`.
    #[serde(rename = "bifurcation_2d")]
    Bifurcation2d,
    /// `N((s/√d) 1_d, I_d)`.
    #[serde(rename = "gauss_translate_nd")]
    GaussTranslateNd { dim: usize },
    /// `N(−1 + 2s, 1)` observed through an SDE with diffusion `sigma`.
    #[serde(rename = "stochastic_gauss_1d")]
    StochasticGauss1d { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalFlow {
    #[serde(flatten)]
    pub kind: FlowKind,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1.0
}

/// `N(m, 1)` density at `x`.
#[inline]
fn normal_pdf(x: f64, m: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * (x - m) * (x - m)).exp()
}

impl MarginalFlow {
    pub fn new(kind: FlowKind, horizon: f64) -> Result<Self> {
        let flow = Self { kind, horizon };
        flow.validate()?;
        Ok(flow)
    }

    /// Horizon `T = 1`.
    pub fn unit(kind: FlowKind) -> Self {
        Self::new(kind, 1.0).expect("unit-horizon flow")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        match self.kind {
            FlowKind::GaussTranslateNd { dim: 0 } => {
                Err(Error::Config("dimension must be at least 1".into()))
            }
            FlowKind::StochasticGauss1d { sigma } if !(sigma >= 0.0) => Err(Error::Config(
                format!("sigma must be nonnegative, got {sigma}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FlowKind::GaussTranslate1d
            | FlowKind::Roundtrip1d
            | FlowKind::BimodalMerge1d
            | FlowKind::StochasticGauss1d { .. } => 1,
            FlowKind::GaussTranslate2d | FlowKind::Bifurcation2d => 2,
            FlowKind::GaussTranslateNd { dim } => dim,
        }
    }

    /// Diffusion coefficient of the dynamics the flow is observed under.
    pub fn sigma(&self) -> f64 {
        match self.kind {
            FlowKind::StochasticGauss1d { sigma } => sigma,
            _ => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FlowKind::GaussTranslate1d => "gauss_translate_1d",
            FlowKind::Roundtrip1d => "roundtrip_1d",
            FlowKind::BimodalMerge1d => "bimodal_merge_1d",
            FlowKind::GaussTranslate2d => "gauss_translate_2d",
            FlowKind::Bifurcation2d => "bifurcation_2d",
            FlowKind::GaussTranslateNd { .. } => "gauss_translate_nd",
            FlowKind::StochasticGauss1d { .. } => "stochastic_gauss_1d",
        }
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(t / self.horizon)
    }

    /// Mean of the Gaussian kinds, or the per-mode offset of the bimodal kinds.
    fn gaussian_mean(&self, s: f64, out: &mut [f64]) {
        match self.kind {
            FlowKind::GaussTranslate1d | FlowKind::StochasticGauss1d { .. } => {
                out[0] = -1.0 + 2.0 * s
            }
            FlowKind::Roundtrip1d => out[0] = 2.0 * (PI * s).sin(),
            FlowKind::GaussTranslate2d => {
                out[0] = -1.0 + 2.0 * s;
                out[1] = 0.5 * s;
            }
            FlowKind::GaussTranslateNd { dim } => {
                let m = s / (dim as f64).sqrt();
                out.iter_mut().for_each(|v| *v = m);
            }
            FlowKind::BimodalMerge1d | FlowKind::Bifurcation2d => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = 2.0 - 2.0 * s;
            }
        }
    }

    fn is_mixture(&self) -> bool {
        matches!(
            self.kind,
            FlowKind::BimodalMerge1d | FlowKind::Bifurcation2d
        )
    }

    /// `n` i.i.d. draws from `μ_t`. Mixtures pick a component by a fair coin
    /// per particle.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Points> {
        let s = self.check_time(t)?;
        let d = self.dim();
        let mut mean = vec![0.0; d];
        self.gaussian_mean(s, &mut mean);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let sign = if self.is_mixture() {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            } else {
                1.0
            };
            for (i, m) in mean.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let centre = if i == 0 { sign * m } else { *m };
                data.push(centre + z);
            }
        }
        Points::new(d, data)
    }

    /// Closed-form density of `μ_t` at `x`.
    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let s = self.check_time(t)?;
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let mut mean = vec![0.0; d];
        self.gaussian_mean(s, &mut mean);
        let tail: f64 = (1..d).map(|i| normal_pdf(x[i], mean[i])).product();
        let first = if self.is_mixture() {
            0.5 * normal_pdf(x[0], mean[0]) + 0.5 * normal_pdf(x[0], -mean[0])
        } else {
            normal_pdf(x[0], mean[0])
        };
        Ok(first * tail)
    }

    /// The optimal drift `u*(t, x)` written into `out`.
    pub fn true_drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = t / self.horizon;
        let inv_t = 1.0 / self.horizon;
        match self.kind {
            FlowKind::GaussTranslate1d => out[0] = 2.0 * inv_t,
            FlowKind::Roundtrip1d => out[0] = 2.0 * PI * (PI * s).cos() * inv_t,
            FlowKind::BimodalMerge1d => out[0] = -2.0 * (2.0 * (1.0 - s) * x[0]).tanh() * inv_t,
            FlowKind::GaussTranslate2d => {
                out[0] = 2.0 * inv_t;
                out[1] = 0.5 * inv_t;
            }
            FlowKind::Bifurcation2d => {
                out[0] = -2.0 * (2.0 * (1.0 - s) * x[0]).tanh() * inv_t;
                out[1] = 0.0;
            }
            FlowKind::GaussTranslateNd { dim } => {
                let v = inv_t / (dim as f64).sqrt();
                out.iter_mut().for_each(|o| *o = v);
            }
            FlowKind::StochasticGauss1d { sigma } => {
                let m = -1.0 + 2.0 * s;
                out[0] = 2.0 * inv_t - 0.5 * sigma * sigma * (x[0] - m);
            }
        }
    }

    pub fn true_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.true_drift_into(t, x, &mut out);
        out
    }

    /// The optimal drift as a [`VelocityField`].
    pub fn truth(&self) -> TrueDrift<'_> {
        TrueDrift(self)
    }
}

/// Adapter exposing `u*` of a flow as a velocity field.
#[derive(Clone, Copy, Debug)]
pub struct TrueDrift<'a>(pub &'a MarginalFlow);

impl VelocityField for TrueDrift<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.0.true_drift_into(t, x, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(p: &[f64]) -> (f64, f64) {
        let n = p.len() as f64;
        let m = p.iter().sum::<f64>() / n;
        (m, p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
    }

    #[test]
    fn translate_moments_at_zero() {
        let f = MarginalFlow::unit(FlowKind::GaussTranslate1d);
        let p = f
            .sample(0.0, 200_000, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let (m, v) = moments(p.as_slice());
        assert!((m + 1.0).abs() < 0.01 && (v - 1.0).abs() < 0.02);
    }

    #[test]
    fn bimodal_coincides_at_one() {
        let f = MarginalFlow::unit(FlowKind::BimodalMerge1d);
        let p = f
            .sample(1.0, 100_000, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let (m, v) = moments(p.as_slice());
        assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.03);
        let p0 = f
            .sample(0.0, 100_000, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        // mixture of ±2 with unit variance: variance 5
        assert!((moments(p0.as_slice()).1 - 5.0).abs() < 0.1);
    }

    #[test]
    fn bifurcation_second_coordinate_standard() {
        let f = MarginalFlow::unit(FlowKind::Bifurcation2d);
        for &t in &[0.0, 0.4, 1.0] {
            let p = f
                .sample(t, 50_000, &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap();
            let (m, v) = moments(&p.column(1));
            assert!(m.abs() < 0.03 && (v - 1.0).abs() < 0.04);
        }
    }

    #[test]
    fn sample_rejects_out_of_range_time() {
        let f = MarginalFlow::unit(FlowKind::Roundtrip1d);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(f.sample(-0.01, 3, &mut rng).is_err());
        assert!(f.sample(1.01, 3, &mut rng).is_err());
    }

    #[test]
    fn drift_examples() {
        let rt = MarginalFlow::unit(FlowKind::Roundtrip1d);
        assert!(rt.true_drift(0.5, &[3.0])[0].abs() < 1e-15);
        let bm = MarginalFlow::unit(FlowKind::BimodalMerge1d);
        assert_eq!(bm.true_drift(1.0, &[1.7])[0], 0.0);
        let st = MarginalFlow::unit(FlowKind::StochasticGauss1d { sigma: 1.0 });
        assert_eq!(st.true_drift(0.0, &[0.0])[0], 1.5);
        // -x/2 + 3/2 + t
        assert!((st.true_drift(0.3, &[0.8])[0] - (-0.4 + 1.5 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn nd_drift_has_unit_norm() {
        for d in [1, 2, 3, 5, 8, 10] {
            let f = MarginalFlow::unit(FlowKind::GaussTranslateNd { dim: d });
            let u = f.true_drift(0.3, &vec![0.1; d]);
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn density_values() {
        let f = MarginalFlow::unit(FlowKind::GaussTranslate1d);
        assert!((f.density(0.5, &[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let bm = MarginalFlow::unit(FlowKind::BimodalMerge1d);
        let expect = 0.5 * normal_pdf(0.0, -2.0) + 0.5 * normal_pdf(0.0, 2.0);
        assert!((bm.density(0.0, &[0.0]).unwrap() - expect).abs() < 1e-16);
    }

    #[test]
    fn densities_integrate_to_one() {
        let kinds = [
            FlowKind::GaussTranslate1d,
            FlowKind::Roundtrip1d,
            FlowKind::BimodalMerge1d,
            FlowKind::StochasticGauss1d { sigma: 1.0 },
        ];
        for kind in kinds {
            let f = MarginalFlow::unit(kind);
            for &t in &[0.0, 0.3, 1.0] {
                // composite Simpson on [-14, 14]
                let n = 4000;
                let (a, b) = (-14.0, 14.0);
                let h = (b - a) / n as f64;
                let mut acc = 0.0;
                for i in 0..=n {
                    let w = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += w * f.density(t, &[a + i as f64 * h]).unwrap();
                }
                assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
            }
        }
        // 2-d kinds factor, so a product grid suffices
        for kind in [FlowKind::GaussTranslate2d, FlowKind::Bifurcation2d] {
            let f = MarginalFlow::unit(kind);
            let n = 600;
            let h = 24.0 / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = [-12.0 + (i as f64 + 0.5) * h, -12.0 + (j as f64 + 0.5) * h];
                    acc += f.density(0.6, &x).unwrap();
                }
            }
            assert!((acc * h * h - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn horizon_scaling() {
        let f = MarginalFlow::new(FlowKind::GaussTranslate1d, 2.0).unwrap();
        assert_eq!(f.true_drift(1.0, &[0.0])[0], 1.0);
        assert!(MarginalFlow::new(FlowKind::GaussTranslate1d, 0.0).is_err());
    }
}
