use crate::error::{Error, Result};
use crate::models::{DriftModel, Model, VelocityField};
use crate::optim::{minimize_qn, QuasiNewtonConfig};
use crate::points::Points;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowMatchingConfig {
    /// Number of `(t, X₀, X₁)` regression triples.
    pub n_pairs: usize,
    pub horizon: f64,
    pub optimizer: QuasiNewtonConfig,
}

impl Default for FlowMatchingConfig {
    fn default() -> Self {
        Self {
            n_pairs: 20_000,
            horizon: 1.0,
            optimizer: QuasiNewtonConfig {
                restarts: 1,
                ..Default::default()
            },
        }
    }
}

/// Regresses `u_θ(t, X_t)` onto `(X₁ − X₀)/T` along the straight-line
/// interpolant with independently drawn endpoints.
pub fn flow_matching_fit<R: Rng + ?Sized>(
    mu0: &Points,
    mu1: &Points,
    model: &Model,
    config: &FlowMatchingConfig,
    rng: &mut R,
) -> Result<Model> {
    let d = model.dim();
    if mu0.dim() != d || mu1.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu0.dim().max(mu1.dim()),
        });
    }
    if mu0.is_empty() || mu1.is_empty() || config.n_pairs == 0 {
        return Err(Error::Empty("flow matching samples"));
    }
    let horizon = config.horizon;
    let mut times = Vec::with_capacity(config.n_pairs);
    let mut xt = Vec::with_capacity(config.n_pairs * d);
    let mut targets = Vec::with_capacity(config.n_pairs * d);
    for _ in 0..config.n_pairs {
        let s: f64 = rng.gen();
        let a = mu0.get(rng.gen_range(0..mu0.len()));
        let b = mu1.get(rng.gen_range(0..mu1.len()));
        times.push(s * horizon);
        for k in 0..d {
            xt.push((1.0 - s) * a[k] + s * b[k]);
            targets.push((b[k] - a[k]) / horizon);
        }
    }
    let xt = Points::new(d, xt)?;
    let n = config.n_pairs as f64;
    let mut work = model.clone();
    let objective = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        work.set_params(w);
        let u = work.evaluate(&times, &xt)?;
        let resid: Vec<f64> = u.iter().zip(&targets).map(|(a, b)| a - b).collect();
        let value = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let cot: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
        Ok((value, work.backprop(&times, &xt, &cot)?))
    };
    let r = minimize_qn(objective, model.params(), &config.optimizer)?;
    Ok(model.with_params(&r.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FeatureSet, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(n: usize, m: f64, rng: &mut ChaCha8Rng) -> Points {
        Points::from_scalars(
            (0..n)
                .map(|_| {
                    m + {
                        let z: f64 = StandardNormal.sample(rng);
                        z
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn translation_gives_constant_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = (gauss(4000, -1.0, &mut rng), gauss(4000, 1.0, &mut rng));
        let model = ModelSpec::Dictionary {
            features: FeatureSet::Affine1d,
        }
        .zeros()
        .unwrap();
        let fit =
            flow_matching_fit(&a, &b, &model, &FlowMatchingConfig::default(), &mut rng).unwrap();
        let mut u = [0.0];
        for (t, x) in [(0.0, -1.0), (0.5, 0.0), (1.0, 1.0)] {
            fit.velocity(t, &[x], &mut u);
            assert!((u[0] - 2.0).abs() < 0.2, "u({t}, {x}) = {}", u[0]);
        }
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (gauss(300, 0.0, &mut rng), gauss(300, 0.0, &mut rng));
        let model = ModelSpec::Dictionary {
            features: FeatureSet::QuadT1d,
        }
        .zeros()
        .unwrap();
        let cfg = FlowMatchingConfig {
            n_pairs: 2000,
            ..Default::default()
        };
        let f1 =
            flow_matching_fit(&a, &b, &model, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let f2 =
            flow_matching_fit(&a, &b, &model, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(f1, f2);
    }
}
