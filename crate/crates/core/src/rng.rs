//! Seed discipline.
//!
//! Every random stream is derived from a master seed and a short path of
//! labels, e.g. `(master, [stage::BATCH, member])`. The split function is a
//! chained SplitMix64 finalizer, so streams for distinct paths are
//! statistically independent and no global RNG state exists.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Stage labels for [`derive_seed`].
pub mod stage {
    pub const BATCH: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const SIMULATION: u64 = 0x03;
    pub const REFERENCE: u64 = 0x04;
    pub const EVALUATION: u64 = 0x05;
    pub const BASELINE: u64 = 0x06;
    pub const OPTIMIZER: u64 = 0x07;
    pub const FLOW_MATCHING: u64 = 0x08;
    pub const FLOOR: u64 = 0x09;
    pub const PROJECTION: u64 = 0x0a;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed: `s_0 = mix(master)`, `s_{k+1} = mix(s_k ^ mix(label_k))`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

/// A fresh stream for `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, path))
}
