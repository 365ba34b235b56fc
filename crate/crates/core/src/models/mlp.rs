use super::{DriftModel, VelocityField};
use crate::error::{Error, Result};
use crate::rng::Stream;
use rand::Rng;
use rand_distr::StandardNormal;

/// Fully connected `(t, x) ↦ u` network: tanh hidden layers, linear output.
///
/// Parameters are stored layer by layer as `W` (row-major, `out × in`)
/// followed by `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDrift {
    dim: usize,
    /// `[d + 1, h₁, …, h_k, d]`
    widths: Vec<usize>,
    params: Vec<f64>,
}

impl MlpDrift {
    fn layout(dim: usize, hidden: &[usize]) -> Result<Vec<usize>> {
        if dim == 0 {
            return Err(Error::Config(
                "MLP output dimension must be at least 1".into(),
            ));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be nonempty".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(dim + 1);
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Ok(widths)
    }

    fn count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn zeros(dim: usize, hidden: &[usize]) -> Result<Self> {
        let widths = Self::layout(dim, hidden)?;
        let n = Self::count(&widths);
        Ok(Self {
            dim,
            widths,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(dim: usize, hidden: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(dim, hidden)?;
        if params.len() != m.params.len() {
            return Err(Error::DimensionMismatch {
                expected: m.params.len(),
                got: params.len(),
            });
        }
        m.params = params;
        Ok(m)
    }

    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn random(dim: usize, hidden: &[usize], rng: &mut Stream) -> Result<Self> {
        let mut m = Self::zeros(dim, hidden)?;
        let mut offset = 0;
        for w in m.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for v in &mut m.params[offset..offset + fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * scale;
            }
            offset += fan_out * (fan_in + 1);
        }
        Ok(m)
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Forward pass keeping every layer's activation (input included).
    fn forward(&self, t: f64, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.widths.len());
        let mut input = Vec::with_capacity(self.dim + 1);
        input.push(t);
        input.extend_from_slice(x);
        acts.push(input);
        let n_layers = self.widths.len() - 1;
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_out * (n_in + 1)];
            let prev = &acts[l];
            let mut next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bias[o] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(next);
            offset += n_out * (n_in + 1);
        }
        acts
    }
}

impl VelocityField for MlpDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let acts = self.forward(t, x);
        out.copy_from_slice(acts.last().expect("output layer"));
    }
}

impl DriftModel for MlpDrift {
    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    fn accumulate_param_grad(&self, t: f64, x: &[f64], cotangent: &[f64], grad: &mut [f64]) {
        if cotangent.iter().all(|c| *c == 0.0) {
            return;
        }
        let acts = self.forward(t, x);
        let n_layers = self.widths.len() - 1;
        let offsets: Vec<usize> = self
            .widths
            .windows(2)
            .scan(0, |acc, w| {
                let start = *acc;
                *acc += w[1] * (w[0] + 1);
                Some(start)
            })
            .collect();
        let mut delta = cotangent.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let g_row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in g_row.iter_mut().zip(prev) {
                    *g += delta[o] * a;
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                let mut back = vec![0.0; n_in];
                for o in 0..n_out {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += w * delta[o];
                    }
                }
                for (b, a) in back.iter_mut().zip(prev) {
                    *b *= 1.0 - a * a;
                }
                delta = back;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::Points;
    use rand::SeedableRng;

    #[test]
    fn parameter_count_matches_layout() {
        let m = MlpDrift::zeros(1, &[48, 48]).unwrap();
        // (2·48 + 48) + (48·48 + 48) + (48 + 1)
        assert_eq!(m.n_params(), 2545);
        let m2 = MlpDrift::zeros(2, &[16]).unwrap();
        assert_eq!(m2.n_params(), 3 * 16 + 16 + 16 * 2 + 2);
    }

    #[test]
    fn zero_weights_zero_output() {
        let m = MlpDrift::zeros(2, &[8, 8]).unwrap();
        let mut u = [1.0, 1.0];
        m.velocity(0.3, &[1.0, -2.0], &mut u);
        assert_eq!(u, [0.0, 0.0]);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = Stream::seed_from_u64(seed);
            let m = MlpDrift::random(2, &[7, 5], &mut rng).unwrap();
            let xs = Points::new(2, vec![0.3, -0.8, 1.1, 0.4, -2.0, 0.9]).unwrap();
            let ts = [0.1, 0.5, 0.9];
            let cot = [0.7, -1.3, 0.2, 0.5, -0.4, 1.1];
            let grad = m.backprop(&ts, &xs, &cot).unwrap();
            let objective = |p: &[f64]| {
                let mm = MlpDrift::from_params(2, &[7, 5], p.to_vec()).unwrap();
                let u = mm.evaluate(&ts, &xs).unwrap();
                u.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut p = m.params().to_vec();
            let h = 1e-6;
            let mut err2 = 0.0;
            let mut norm2 = 0.0;
            for i in 0..p.len() {
                let orig = p[i];
                p[i] = orig + h;
                let fp = objective(&p);
                p[i] = orig - h;
                let fm = objective(&p);
                p[i] = orig;
                let fd = (fp - fm) / (2.0 * h);
                err2 += (fd - grad[i]).powi(2);
                norm2 += grad[i].powi(2);
            }
            assert!(err2.sqrt() <= 1e-6 * norm2.sqrt(), "seed {seed}");
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = MlpDrift::random(1, &[48, 48], &mut Stream::seed_from_u64(1)).unwrap();
        let b = MlpDrift::random(1, &[48, 48], &mut Stream::seed_from_u64(1)).unwrap();
        let c = MlpDrift::random(1, &[48, 48], &mut Stream::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_output_scale() {
        let mut rng = Stream::seed_from_u64(11);
        let m = MlpDrift::random(1, &[48, 48], &mut rng).unwrap();
        let n = 2000;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let t: f64 = rng.sample(StandardNormal);
            let x: f64 = rng.sample(StandardNormal);
            let mut u = [0.0];
            m.velocity(t, &[x], &mut u);
            vals.push(u[0]);
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((0.1..=3.0).contains(&std), "std {std}");
    }
}
