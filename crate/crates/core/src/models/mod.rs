//! Parameterized velocity fields `u(t, x)`.
//!
//! Every model exposes the same surface (evaluation, reverse-mode
//! accumulation of parameter gradients, flat parameter access), so the loss
//! code never needs to know which family it is optimizing.

mod dictionary;
mod mlp;

pub use dictionary::{FeatureDictionary, FeatureSet};
pub use mlp::MlpDrift;

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Anything that maps `(t, x)` to a velocity in ℝᵈ.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// The identically-zero drift.
#[derive(Clone, Copy, Debug)]
pub struct ZeroDrift(pub usize);

impl VelocityField for ZeroDrift {
    fn dim(&self) -> usize {
        self.0
    }

    fn velocity(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A velocity field with trainable parameters.
pub trait DriftModel: VelocityField + Send {
    fn n_params(&self) -> usize;
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: &[f64]);

    /// Adds `∂(cotangentᵀ u(t, x)) / ∂θ` into `grad`.
    fn accumulate_param_grad(&self, t: f64, x: &[f64], cotangent: &[f64], grad: &mut [f64]);

    /// Evaluates the model at `times[i], xs[i]`, returning a row-major buffer.
    fn evaluate(&self, times: &[f64], xs: &Points) -> Result<Vec<f64>> {
        let d = self.dim();
        if xs.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xs.dim(),
            });
        }
        if times.len() != xs.len() {
            return Err(Error::Contract("one time per point required".into()));
        }
        let mut out = vec![0.0; xs.len() * d];
        for (i, (t, x)) in times.iter().zip(xs.iter()).enumerate() {
            self.velocity(*t, x, &mut out[i * d..(i + 1) * d]);
        }
        Ok(out)
    }

    /// Reverse-mode gradient of `Σᵢ cotangentᵢᵀ u(tᵢ, xᵢ)` with respect to θ.
    fn backprop(&self, times: &[f64], xs: &Points, cotangents: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if xs.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xs.dim(),
            });
        }
        if cotangents.len() != xs.len() * d || times.len() != xs.len() {
            return Err(Error::Contract("cotangents misaligned with points".into()));
        }
        let mut grad = vec![0.0; self.n_params()];
        for (i, (t, x)) in times.iter().zip(xs.iter()).enumerate() {
            self.accumulate_param_grad(*t, x, &cotangents[i * d..(i + 1) * d], &mut grad);
        }
        Ok(grad)
    }
}

/// Serializable description of a model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Dictionary { features: FeatureSet },
    Mlp { dim: usize, hidden: Vec<usize> },
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Dictionary { features } => features.dim(),
            ModelSpec::Mlp { dim, .. } => *dim,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Dictionary { features } => features.name().to_string(),
            ModelSpec::Mlp { hidden, .. } => format!(
                "mlp_{}",
                hidden
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            ),
        }
    }

    /// Randomly initialized model: dictionary weights `U(−0.5, 0.5)`, MLP
    /// weights `N(0, 1/fan_in)` with zero biases.
    pub fn init(&self, rng: &mut Stream) -> Result<Model> {
        Ok(match self {
            ModelSpec::Dictionary { features } => {
                Model::Dictionary(FeatureDictionary::random(features.clone(), rng)?)
            }
            ModelSpec::Mlp { dim, hidden } => Model::Mlp(MlpDrift::random(*dim, hidden, rng)?),
        })
    }

    /// Model with all parameters zero.
    pub fn zeros(&self) -> Result<Model> {
        Ok(match self {
            ModelSpec::Dictionary { features } => {
                Model::Dictionary(FeatureDictionary::zeros(features.clone())?)
            }
            ModelSpec::Mlp { dim, hidden } => Model::Mlp(MlpDrift::zeros(*dim, hidden)?),
        })
    }
}

/// Closed set of model families behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Dictionary(FeatureDictionary),
    Mlp(MlpDrift),
}

impl Model {
    pub fn is_linear(&self) -> bool {
        matches!(self, Model::Dictionary(_))
    }

    pub fn with_params(&self, params: &[f64]) -> Model {
        let mut m = self.clone();
        m.set_params(params);
        m
    }
}

impl VelocityField for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Dictionary(m) => m.dim(),
            Model::Mlp(m) => m.dim(),
        }
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Model::Dictionary(m) => m.velocity(t, x, out),
            Model::Mlp(m) => m.velocity(t, x, out),
        }
    }
}

impl DriftModel for Model {
    fn n_params(&self) -> usize {
        match self {
            Model::Dictionary(m) => m.n_params(),
            Model::Mlp(m) => m.n_params(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            Model::Dictionary(m) => m.params(),
            Model::Mlp(m) => m.params(),
        }
    }

    fn set_params(&mut self, params: &[f64]) {
        match self {
            Model::Dictionary(m) => m.set_params(params),
            Model::Mlp(m) => m.set_params(params),
        }
    }

    fn accumulate_param_grad(&self, t: f64, x: &[f64], cotangent: &[f64], grad: &mut [f64]) {
        match self {
            Model::Dictionary(m) => m.accumulate_param_grad(t, x, cotangent, grad),
            Model::Mlp(m) => m.accumulate_param_grad(t, x, cotangent, grad),
        }
    }
}
