//! All-time optimal transport: learn a drift field from marginal snapshots
//! by minimizing kinetic energy plus a kernel penalty on the
//! continuity-equation residual.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod flows;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod par;
pub mod penalty;
pub mod points;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
