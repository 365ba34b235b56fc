//! Comparison methods: Waddington-OT style drift reconstruction from
//! entropic couplings, an affine multi-marginal map chain fitted with an MMD
//! marginal penalty, and two-marginal flow matching.
//!
//! The affine MMOT objective is a reconstruction from a verbal description
//! (kinetic energy of consecutive maps plus `λ_m` times MMD² to each
//! snapshot, kernel bandwidth `α·h`); it is a surrogate, not a port.

mod flow_matching;
mod mmot;
mod sinkhorn;
mod wot;

pub use flow_matching::{flow_matching_fit, FlowMatchingConfig};
pub use mmot::{mmot_affine_fit, AffineMapChain, MmotCell, MmotConfig, MmotFit};
pub use sinkhorn::{mccann_interpolate, sinkhorn_log, sq_cost, EntropicCoupling, SinkhornConfig};
pub use wot::{wot_drift, WotDrift};

use crate::points::Points;

/// A sample observed at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub points: Points,
}
