//! Return and advantage estimators over a single episode.
//!
//! Every episode ends in a terminal state, so the value after the last
//! step is zero.

/// Discounted returns `G_t = Σ_{k≥t} γ^{k-t} r_k`.
pub fn mc_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// One-step errors `δ_t = r_t + γ V(s_{t+1}) - V(s_t)`.
pub fn td0_errors(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    (0..rewards.len())
        .map(|t| {
            let next = values.get(t + 1).copied().unwrap_or(0.0);
            rewards[t] + gamma * next - values[t]
        })
        .collect()
}

/// Generalized advantage estimates `Â_t = Σ_k (γλ)^k δ_{t+k}`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let delta = td0_errors(rewards, values, gamma);
    let mut out = vec![0.0; delta.len()];
    let mut acc = 0.0;
    for t in (0..delta.len()).rev() {
        acc = delta[t] + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// Standardises a batch to zero mean and unit deviation. A batch with no
/// spread maps to zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; adv.len()];
    }
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}
