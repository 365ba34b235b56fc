//! Optimizers for the ensemble-averaged loss.
//!
//! [`minimize_qn`] is a limited-memory BFGS for the dictionary models on a
//! fixed pre-cached batch pool; [`minimize_adaptive`] is Adam with a
//! half-cosine step schedule and mini-batch rotation, used for the MLP and
//! the stochastic run.

mod adam;
mod lbfgs;

pub use adam::{cosine_lr, minimize_adaptive, AdaptiveResult, FirstOrderConfig};
pub use lbfgs::{minimize_qn, minimize_qn_restarts, QnResult, QuasiNewtonConfig, StopReason};

/// Largest absolute entry.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
