//! Potential-based reward shaping driven by the upper-section prediction head.

use serde::{Deserialize, Serialize};

use crate::game::{UPPER_BONUS, UPPER_BONUS_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingConfig {
    pub enabled: bool,
    /// Weight of the shaping increment added to each reward.
    pub beta_shape: f64,
    /// Weight of the upper-head regression loss.
    pub beta_regression: f64,
    /// Use the unnormalised potential `35 · clamp(63(Û+1), 0, 63)`.
    pub literal_eq13: bool,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig { enabled: false, beta_shape: 1.0, beta_regression: 1.0, literal_eq13: false }
    }
}

/// Regression target for the upper head: `U/63 - 1`.
pub fn upper_target(upper_total: u32) -> f64 {
    upper_total as f64 / UPPER_BONUS_THRESHOLD as f64 - 1.0
}

/// Potential of a state whose upper-head prediction is `u_hat`.
pub fn potential(u_hat: f64, literal: bool) -> f64 {
    let t = UPPER_BONUS_THRESHOLD as f64;
    let predicted = (t * (u_hat + 1.0)).clamp(0.0, t);
    let phi = UPPER_BONUS as f64 * predicted;
    if literal {
        phi
    } else {
        phi / t
    }
}

/// Shaping increments `β(γΦ(s_{t+1}) - Φ(s_t))` for one episode, where the
/// state after the last step takes the potential of the last state.
pub fn shaping_increments(u_hat: &[f64], beta: f64, gamma: f64, literal: bool) -> Vec<f64> {
    let phi: Vec<f64> = u_hat.iter().map(|&u| potential(u, literal)).collect();
    (0..phi.len())
        .map(|t| {
            let next = phi.get(t + 1).copied().unwrap_or(phi[t]);
            beta * (gamma * next - phi[t])
        })
        .collect()
}

/// Rewards with the shaping increments added.
pub fn shaped_rewards(rewards: &[f64], u_hat: &[f64], cfg: &ShapingConfig, gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), u_hat.len());
    if !cfg.enabled {
        return rewards.to_vec();
    }
    shaping_increments(u_hat, cfg.beta_shape, gamma, cfg.literal_eq13)
        .into_iter()
        .zip(rewards)
        .map(|(s, r)| r + s)
        .collect()
}
