use super::{DriftModel, VelocityField};
use crate::error::{Error, Result};
use crate::rng::Stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Built-in feature sets `Φ(t, x)`. Every output component uses the same
/// features; the weight matrix is `d × F`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "set", deny_unknown_fields)]
pub enum FeatureSet {
    /// `[1, t, x]`
    #[serde(rename = "affine_1d")]
    Affine1d,
    /// `[1, t, t², x]`
    #[serde(rename = "quad_t_1d")]
    QuadT1d,
    /// `[1, t, x, tx]`
    #[serde(rename = "bilinear_1d")]
    Bilinear1d,
    /// `[1, t, x, tx, tanh x, t tanh x, tanh 2x, t tanh 2x]`
    #[serde(rename = "tanh_1d")]
    Tanh1d,
    /// `[1, t, x₁, …, x_d]` per component
    #[serde(rename = "affine_d")]
    AffineD { dim: usize },
    /// `[1, t, x₁, x₂, tx₁, tx₂]` per component
    #[serde(rename = "bilinear_2d")]
    Bilinear2d,
    /// `[1, t, x₁, x₂, tx₁, tx₂, tanh x₁, t tanh x₁, tanh 2x₁, t tanh 2x₁]` per component
    #[serde(rename = "tanh_2d")]
    Tanh2d,
}

impl FeatureSet {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSet::Affine1d
            | FeatureSet::QuadT1d
            | FeatureSet::Bilinear1d
            | FeatureSet::Tanh1d => 1,
            FeatureSet::AffineD { dim } => *dim,
            FeatureSet::Bilinear2d | FeatureSet::Tanh2d => 2,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FeatureSet::Affine1d => 3,
            FeatureSet::QuadT1d | FeatureSet::Bilinear1d => 4,
            FeatureSet::Tanh1d => 8,
            FeatureSet::AffineD { dim } => dim + 2,
            FeatureSet::Bilinear2d => 6,
            FeatureSet::Tanh2d => 10,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureSet::Affine1d => "affine_1d",
            FeatureSet::QuadT1d => "quad_t_1d",
            FeatureSet::Bilinear1d => "bilinear_1d",
            FeatureSet::Tanh1d => "tanh_1d",
            FeatureSet::AffineD { .. } => "affine_d",
            FeatureSet::Bilinear2d => "bilinear_2d",
            FeatureSet::Tanh2d => "tanh_2d",
        }
    }

    /// Writes `Φ(t, x)` into `out` (length `n_features`).
    pub fn features(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            FeatureSet::Affine1d => out.copy_from_slice(&[1.0, t, x[0]]),
            FeatureSet::QuadT1d => out.copy_from_slice(&[1.0, t, t * t, x[0]]),
            FeatureSet::Bilinear1d => out.copy_from_slice(&[1.0, t, x[0], t * x[0]]),
            FeatureSet::Tanh1d => {
                let (a, b) = (x[0].tanh(), (2.0 * x[0]).tanh());
                out.copy_from_slice(&[1.0, t, x[0], t * x[0], a, t * a, b, t * b]);
            }
            FeatureSet::AffineD { .. } => {
                out[0] = 1.0;
                out[1] = t;
                out[2..].copy_from_slice(x);
            }
            FeatureSet::Bilinear2d => {
                out.copy_from_slice(&[1.0, t, x[0], x[1], t * x[0], t * x[1]])
            }
            FeatureSet::Tanh2d => {
                let (a, b) = (x[0].tanh(), (2.0 * x[0]).tanh());
                out.copy_from_slice(&[1.0, t, x[0], x[1], t * x[0], t * x[1], a, t * a, b, t * b]);
            }
        }
    }
}

/// `u_i(t, x) = Σ_f W[i, f] Φ_f(t, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDictionary {
    features: FeatureSet,
    /// Row-major `d × F`.
    weights: Vec<f64>,
}

impl FeatureDictionary {
    pub fn new(features: FeatureSet, weights: Vec<f64>) -> Result<Self> {
        if features.dim() == 0 {
            return Err(Error::Config(
                "dictionary dimension must be at least 1".into(),
            ));
        }
        let expected = features.dim() * features.n_features();
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: weights.len(),
            });
        }
        Ok(Self { features, weights })
    }

    pub fn zeros(features: FeatureSet) -> Result<Self> {
        let n = features.dim() * features.n_features();
        Self::new(features, vec![0.0; n])
    }

    pub fn random(features: FeatureSet, rng: &mut Stream) -> Result<Self> {
        let n = features.dim() * features.n_features();
        let w = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self::new(features, w)
    }

    pub fn feature_set(&self) -> &FeatureSet {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

// Feature buffers live on the stack; the largest built-in set has 12 entries
// (affine_d at d = 10), larger d falls back to the heap.
const STACK_FEATURES: usize = 16;

impl VelocityField for FeatureDictionary {
    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let f = self.features.n_features();
        let mut stack = [0.0; STACK_FEATURES];
        let mut heap;
        let phi: &mut [f64] = if f <= STACK_FEATURES {
            &mut stack[..f]
        } else {
            heap = vec![0.0; f];
            &mut heap
        };
        self.features.features(t, x, phi);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * f..(i + 1) * f];
            *o = row.iter().zip(phi.iter()).map(|(w, p)| w * p).sum();
        }
    }
}

impl DriftModel for FeatureDictionary {
    fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn set_params(&mut self, params: &[f64]) {
        self.weights.copy_from_slice(params);
    }

    fn accumulate_param_grad(&self, t: f64, x: &[f64], cotangent: &[f64], grad: &mut [f64]) {
        let f = self.features.n_features();
        let mut phi = vec![0.0; f];
        self.features.features(t, x, &mut phi);
        for (i, c) in cotangent.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            for (g, p) in grad[i * f..(i + 1) * f].iter_mut().zip(&phi) {
                *g += c * p;
            }
        }
    }
}
