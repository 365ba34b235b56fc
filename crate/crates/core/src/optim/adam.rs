use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstOrderConfig {
    pub iterations: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Batches averaged per step.
    pub k_batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Record the mini-batch loss every this many steps (0 disables).
    pub trace_every: usize,
}

impl Default for FirstOrderConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            lr_initial: 3e-3,
            lr_final: 1e-5,
            k_batch: 3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            trace_every: 10,
        }
    }
}

impl FirstOrderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::Config("need 0 < lr_final ≤ lr_initial".into()));
        }
        if self.iterations == 0 || self.k_batch == 0 {
            return Err(Error::Config(
                "iterations and k_batch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::Config("invalid moment constants".into()));
        }
        Ok(())
    }
}

/// Half-cosine from `lr_initial` at step 0 to `lr_final` at the last step.
pub fn cosine_lr(config: &FirstOrderConfig, step: usize) -> f64 {
    let span = config.iterations.saturating_sub(1).max(1) as f64;
    let frac = (step as f64 / span).min(1.0);
    config.lr_final
        + 0.5 * (config.lr_initial - config.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveResult {
    pub params: Vec<f64>,
    /// `(step, mini-batch loss)` samples.
    pub trace: Vec<(usize, f64)>,
    pub skipped: usize,
}

/// Adam over a pool of `pool_size` cached batches.
///
/// `loss_and_grad(w, batch_indices)` returns the mean loss and gradient over
/// the listed batches. Batches are consumed in a shuffled order and the pool
/// is reshuffled once exhausted, so every batch is visited once per epoch.
pub fn minimize_adaptive<F, R>(
    mut loss_and_grad: F,
    w0: &[f64],
    config: &FirstOrderConfig,
    pool_size: usize,
    rng: &mut R,
) -> Result<AdaptiveResult>
where
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    config.validate()?;
    if pool_size == 0 {
        return Err(Error::Empty("batch pool"));
    }
    let n = w0.len();
    let mut w = w0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut picks = Vec::with_capacity(config.k_batch);
    let mut trace = Vec::new();
    let mut skipped = 0;
    let max_skipped = config.iterations / 100;
    let mut updates = 0_i32;

    for step in 0..config.iterations {
        picks.clear();
        for _ in 0..config.k_batch {
            if cursor == pool_size {
                order.shuffle(rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let (loss, g) = loss_and_grad(&w, &picks)?;
        if g.len() != n {
            return Err(Error::Contract(
                "gradient length differs from parameter count".into(),
            ));
        }
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            skipped += 1;
            if skipped > max_skipped {
                return Err(Error::Optimizer(format!(
                    "{skipped} non-finite gradients after {} steps",
                    step + 1
                )));
            }
            continue;
        }
        if config.trace_every > 0 && step % config.trace_every == 0 {
            trace.push((step, loss));
        }
        updates += 1;
        let lr = cosine_lr(config, step);
        let bc1 = 1.0 - config.beta1.powi(updates);
        let bc2 = 1.0 - config.beta2.powi(updates);
        for i in 0..n {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.epsilon);
        }
    }
    Ok(AdaptiveResult {
        params: w,
        trace,
        skipped,
    })
}
