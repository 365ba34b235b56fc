use crate::error::{Error, Result};
use crate::flows::MarginalFlow;
use crate::points::Points;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How the `M` time slices are placed in `[0, T]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Midpoints of `M` equal subintervals.
    #[default]
    Grid,
    /// `M` i.i.d. uniform draws.
    IidUniform,
}

/// `M` time slices with `N` particles each, plus `N₀` draws from `μ₀`.
///
/// Flat index `p = m·N + i` (zero-based) addresses particle `i` of slice `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    horizon: f64,
    per_slice: usize,
    times: Vec<f64>,
    particles: Points,
    initial: Points,
}

impl SampleBatch {
    pub fn new(horizon: f64, times: Vec<f64>, particles: Points, initial: Points) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty("time slices"));
        }
        if particles.is_empty() || initial.is_empty() {
            return Err(Error::Empty("batch particles"));
        }
        if !particles.len().is_multiple_of(times.len()) {
            return Err(Error::Contract(
                "particle count must be a multiple of the slice count".into(),
            ));
        }
        if particles.dim() != initial.dim() {
            return Err(Error::DimensionMismatch {
                expected: particles.dim(),
                got: initial.dim(),
            });
        }
        if let Some(t) = times.iter().find(|t| !(0.0..=horizon).contains(*t)) {
            return Err(Error::Range(format!(
                "slice time {t} outside [0, {horizon}]"
            )));
        }
        let per_slice = particles.len() / times.len();
        Ok(Self {
            horizon,
            per_slice,
            times,
            particles,
            initial,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.particles.dim()
    }

    /// `M`
    pub fn n_slices(&self) -> usize {
        self.times.len()
    }

    /// `N`
    pub fn per_slice(&self) -> usize {
        self.per_slice
    }

    /// `N₀`
    pub fn n_initial(&self) -> usize {
        self.initial.len()
    }

    /// `MN`
    pub fn n_points(&self) -> usize {
        self.particles.len()
    }

    pub fn slice_times(&self) -> &[f64] {
        &self.times
    }

    #[inline]
    pub fn slice_of(&self, p: usize) -> usize {
        p / self.per_slice
    }

    #[inline]
    pub fn time(&self, p: usize) -> f64 {
        self.times[p / self.per_slice]
    }

    #[inline]
    pub fn x(&self, p: usize) -> &[f64] {
        self.particles.get(p)
    }

    pub fn particles(&self) -> &Points {
        &self.particles
    }

    pub fn initial(&self) -> &Points {
        &self.initial
    }

    /// Time of every flat point.
    pub fn point_times(&self) -> Vec<f64> {
        (0..self.n_points()).map(|p| self.time(p)).collect()
    }

    /// Reorders particles inside slice `m` according to `perm`.
    pub fn permute_slice(&mut self, m: usize, perm: &[usize]) {
        let n = self.per_slice;
        let d = self.dim();
        let old: Vec<f64> = (0..n).flat_map(|i| self.x(m * n + i).to_vec()).collect();
        for (dst, &src) in perm.iter().enumerate() {
            self.particles
                .get_mut(m * n + dst)
                .copy_from_slice(&old[src * d..(src + 1) * d]);
        }
    }
}

/// Slice times for `mode`.
pub fn slice_times<R: Rng + ?Sized>(
    m: usize,
    horizon: f64,
    mode: TimeMode,
    rng: &mut R,
) -> Vec<f64> {
    match mode {
        TimeMode::Grid => (0..m)
            .map(|k| (k as f64 + 0.5) * horizon / m as f64)
            .collect(),
        TimeMode::IidUniform => (0..m).map(|_| rng.gen::<f64>() * horizon).collect(),
    }
}

/// Draws one batch from `flow`.
pub fn draw_batch<R: Rng + ?Sized>(
    flow: &MarginalFlow,
    m: usize,
    n: usize,
    n0: usize,
    mode: TimeMode,
    rng: &mut R,
) -> Result<SampleBatch> {
    if m == 0 || n == 0 || n0 == 0 {
        return Err(Error::Config(format!(
            "M, N and N0 must be positive (got {m}, {n}, {n0})"
        )));
    }
    let times = slice_times(m, flow.horizon, mode, rng);
    let d = flow.dim();
    let mut data = Vec::with_capacity(m * n * d);
    for &t in &times {
        data.extend(flow.sample(t, n, rng)?.into_vec());
    }
    let particles = Points::new(d, data)?;
    let initial = flow.sample(0.0, n0, rng)?;
    SampleBatch::new(flow.horizon, times, particles, initial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            slice_times(2, 1.0, TimeMode::Grid, &mut rng),
            vec![0.25, 0.75]
        );
    }

    #[test]
    fn iid_times_average_half_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = 10_000;
        let t = slice_times(m, 1.0, TimeMode::IidUniform, &mut rng);
        let mean = t.iter().sum::<f64>() / m as f64;
        let sd = (1.0f64 / 12.0).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * sd / (m as f64).sqrt());
    }

    #[test]
    fn zero_counts_rejected() {
        let flow = MarginalFlow::unit(FlowKind::GaussTranslate1d);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(draw_batch(&flow, 3, 0, 2, TimeMode::Grid, &mut rng).is_err());
        assert!(draw_batch(&flow, 0, 3, 2, TimeMode::Grid, &mut rng).is_err());
        assert!(draw_batch(&flow, 3, 3, 0, TimeMode::Grid, &mut rng).is_err());
    }

    #[test]
    fn flat_index_layout() {
        let flow = MarginalFlow::unit(FlowKind::GaussTranslate2d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = draw_batch(&flow, 4, 3, 5, TimeMode::Grid, &mut rng).unwrap();
        assert_eq!((b.n_points(), b.n_initial(), b.dim()), (12, 5, 2));
        for p in 0..12 {
            for q in 0..12 {
                assert_eq!(b.time(p) == b.time(q), b.slice_of(p) == b.slice_of(q));
            }
        }
    }
}
