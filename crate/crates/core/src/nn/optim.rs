//! Adam, learning-rate schedule and gradient clipping over flat parameter vectors.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Adam {
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// Applies one update. Non-finite gradients abort before anything changes.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnError> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total`: linear warmup from 0 over the first
/// 5%, constant `max` until 75%, then linear decay to `min_ratio * max`.
pub fn lr_at(step: u64, total: u64, max: f64, min_ratio: f64) -> f64 {
    if total == 0 {
        return max;
    }
    let f = step.min(total) as f64 / total as f64;
    if f < 0.05 {
        max * f / 0.05
    } else if f <= 0.75 {
        max
    } else {
        max * (1.0 - (1.0 - min_ratio) * (f - 0.75) / 0.25)
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` to norm `tau` when their global norm exceeds it.
/// `tau <= 0` disables clipping. Returns the pre-clip norm and whether
/// clipping happened.
pub fn clip_gradients(grads: &mut [f64], tau: f64) -> (f64, bool) {
    let norm = global_norm(grads);
    if tau > 0.0 && norm > tau {
        let s = tau / norm;
        grads.iter_mut().for_each(|g| *g *= s);
        (norm, true)
    } else {
        (norm, false)
    }
}
