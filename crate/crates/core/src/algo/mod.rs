//! Policy-gradient learners: trajectories, estimators and the three losses.

pub mod estimators;
pub mod objective;
pub mod schedule;
pub mod shaping;

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::game::Action;
use crate::nn::{OutputGrads, Outputs};
pub use estimators::{gae, mc_returns, normalize_advantages, td0_errors};
pub use objective::{LossParts, Objective};
pub use schedule::{entropy_coefficients, gamma_at, EntropyRegime, EntropySchedule};
pub use shaping::{potential, shaped_rewards, shaping_increments, upper_target, ShapingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Reinforce,
    A2c,
    Ppo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Reinforce => "reinforce",
            Algorithm::A2c => "a2c",
            Algorithm::Ppo => "ppo",
        }
    }
}

/// Form of the REINFORCE baseline loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueLoss {
    /// `λ_V |V - G|`
    Abs,
    /// `λ_V (V - G)²`
    Squared,
}

/// Which policy heads the entropy bonus covers on each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyHeads {
    /// The head that chose the step's action.
    Acting,
    /// Both heads on every step.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    /// Peak learning rate.
    pub lr: f64,
    /// Final learning rate as a fraction of the peak.
    pub lr_min_ratio: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Global gradient-norm limit; zero disables clipping.
    pub clip_tau: f64,
    /// Critic weight λ_V.
    pub value_coef: f64,
    pub value_loss: ValueLoss,
    pub entropy: EntropySchedule,
    /// Overrides `entropy` with a named setting when present.
    pub entropy_regime: Option<EntropyRegime>,
    pub entropy_heads: EntropyHeads,
    /// Sample self-play actions with dropout active.
    pub rollout_dropout: bool,
    /// GAE λ. A2C uses plain TD(0) errors when absent.
    pub gae_lambda: Option<f64>,
    pub ppo_epsilon: f64,
    pub ppo_epochs: usize,
    pub ppo_games_per_minibatch: usize,
    pub normalize_advantages: bool,
    pub shaping: ShapingConfig,
}

impl AlgoConfig {
    pub fn defaults(algorithm: Algorithm) -> AlgoConfig {
        let base = AlgoConfig {
            algorithm,
            lr: 1e-4,
            lr_min_ratio: 0.05,
            gamma_min: 0.99,
            gamma_max: 0.99,
            clip_tau: 1.0,
            value_coef: 0.005,
            value_loss: ValueLoss::Squared,
            entropy: EntropySchedule {
                roll_max: 0.1,
                roll_min: 0.02,
                score_max: 0.03,
                score_min: 0.01,
                hold: 0.075,
                anneal: 0.9,
            },
            entropy_regime: None,
            gae_lambda: None,
            ppo_epsilon: 0.2,
            ppo_epochs: 4,
            ppo_games_per_minibatch: 4,
            entropy_heads: EntropyHeads::Both,
            rollout_dropout: false,
            normalize_advantages: false,
            shaping: ShapingConfig::default(),
        };
        match algorithm {
            Algorithm::Reinforce => AlgoConfig {
                lr: 1e-3,
                lr_min_ratio: 0.01,
                gamma_min: 0.95,
                gamma_max: 1.0,
                clip_tau: 0.0,
                value_coef: 0.025,
                value_loss: ValueLoss::Abs,
                entropy: EntropySchedule {
                    roll_max: 0.1,
                    roll_min: 0.01,
                    score_max: 0.02,
                    score_min: 0.003,
                    hold: 0.25,
                    anneal: 0.91,
                },
                ..base
            },
            Algorithm::A2c => AlgoConfig {
                normalize_advantages: true,
                shaping: ShapingConfig { enabled: true, ..ShapingConfig::default() },
                ..base
            },
            Algorithm::Ppo => AlgoConfig {
                lr: 1e-3,
                value_coef: 0.02,
                entropy: EntropySchedule {
                    roll_max: 0.005,
                    roll_min: 0.005,
                    score_max: 0.05,
                    score_min: 0.01,
                    hold: 0.05,
                    anneal: 0.9,
                },
                gae_lambda: Some(0.3),
                ..base
            },
        }
    }

    /// The entropy schedule in force, after any named regime.
    pub fn entropy_schedule(&self) -> EntropySchedule {
        self.entropy_regime.map_or(self.entropy, EntropySchedule::regime)
    }

    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            ("lr", self.lr),
            ("lr_min_ratio", self.lr_min_ratio),
            ("clip_tau", self.clip_tau),
            ("value_coef", self.value_coef),
            ("shaping.beta_shape", self.shaping.beta_shape),
            ("shaping.beta_regression", self.shaping.beta_regression),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("algo.{k} must be finite and non-negative, got {v}"));
            }
        }
        for (k, v) in [("gamma_min", self.gamma_min), ("gamma_max", self.gamma_max)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("algo.{k} must lie in [0, 1], got {v}"));
            }
        }
        if let Some(l) = self.gae_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(format!("algo.gae_lambda must lie in [0, 1], got {l}"));
            }
        }
        if !(self.ppo_epsilon > 0.0 && self.ppo_epsilon < 1.0) {
            return Err(format!("algo.ppo_epsilon must lie in (0, 1), got {}", self.ppo_epsilon));
        }
        if self.ppo_epochs == 0 || self.ppo_games_per_minibatch == 0 {
            return Err("algo.ppo_epochs and algo.ppo_games_per_minibatch must be positive".into());
        }
        self.entropy.validate().map_err(|e| format!("algo.entropy: {e}"))
    }
}

/// One decision of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub features: Vec<f64>,
    pub action: Action,
    /// Score-head mask passed to the network for this row.
    pub score_mask: u16,
    /// Log-probability of `action` under the behaviour policy.
    pub log_prob: f64,
    /// Environment reward, before shaping.
    pub reward: f64,
    pub value: f64,
    pub upper_pred: f64,
}

/// A complete episode. The last step is the terminal one.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub game: u64,
    pub steps: Vec<Step>,
    /// Upper-section total of the final card.
    pub upper_total: u32,
    /// Final score (full game) or points banked (single turn).
    pub score: u32,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn upper_preds(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.upper_pred).collect()
    }
}

/// Trajectories flattened into network rows.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Array2<f64>,
    pub score_masks: Vec<u16>,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    /// Rewards after shaping.
    pub rewards: Vec<f64>,
    pub upper_targets: Vec<f64>,
    pub episodes: Vec<Range<usize>>,
}

impl Batch {
    /// Flattens `trajs`, shaping rewards with the collection-time upper
    /// predictions when `shaping.enabled`.
    pub fn new(trajs: &[&Trajectory], shaping: &ShapingConfig, gamma: f64) -> Batch {
        let rows: usize = trajs.iter().map(|t| t.steps.len()).sum();
        let width = trajs.first().and_then(|t| t.steps.first()).map_or(0, |s| s.features.len());
        let mut x = Array2::zeros((rows, width));
        let mut b = Batch {
            x: Array2::zeros((0, 0)),
            score_masks: Vec::with_capacity(rows),
            actions: Vec::with_capacity(rows),
            old_log_probs: Vec::with_capacity(rows),
            old_values: Vec::with_capacity(rows),
            rewards: Vec::with_capacity(rows),
            upper_targets: Vec::with_capacity(rows),
            episodes: Vec::with_capacity(trajs.len()),
        };
        let mut row = 0;
        for t in trajs {
            let start = row;
            for s in &t.steps {
                x.row_mut(row).as_slice_mut().unwrap().copy_from_slice(&s.features);
                b.score_masks.push(s.score_mask);
                b.actions.push(s.action);
                b.old_log_probs.push(s.log_prob);
                b.old_values.push(s.value);
                b.upper_targets.push(upper_target(t.upper_total));
                row += 1;
            }
            b.rewards.extend(shaped_rewards(&t.rewards(), &t.upper_preds(), shaping, gamma));
            b.episodes.push(start..row);
        }
        b.x = x;
        b
    }

    pub fn rows(&self) -> usize {
        self.actions.len()
    }

    /// The listed episodes as a batch of their own, plus the source row of
    /// each selected row.
    pub fn select(&self, episodes: &[usize]) -> (Batch, Vec<usize>) {
        let rows: Vec<usize> = episodes.iter().flat_map(|&e| self.episodes[e].clone()).collect();
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
        let mut ranges = Vec::with_capacity(episodes.len());
        let mut start = 0;
        for &e in episodes {
            let len = self.episodes[e].len();
            ranges.push(start..start + len);
            start += len;
        }
        let b = Batch {
            x: self.x.select(ndarray::Axis(0), &rows),
            score_masks: rows.iter().map(|&r| self.score_masks[r]).collect(),
            actions: rows.iter().map(|&r| self.actions[r]).collect(),
            old_log_probs: pick(&self.old_log_probs),
            old_values: pick(&self.old_values),
            rewards: pick(&self.rewards),
            upper_targets: pick(&self.upper_targets),
            episodes: ranges,
        };
        (b, rows)
    }

    /// Applies `f` to each episode's slice of `xs` and concatenates the results.
    pub fn per_episode(&self, xs: &[f64], f: impl Fn(&[f64], Range<usize>) -> Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows());
        for ep in &self.episodes {
            out.extend(f(&xs[ep.clone()], ep.clone()));
        }
        out
    }

    /// Discounted returns of the shaped rewards.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        self.per_episode(&self.rewards, |r, _| mc_returns(r, gamma))
    }

    /// GAE over the shaped rewards and the given per-row values.
    pub fn gae(&self, values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        self.per_episode(&self.rewards, |r, ep| gae(r, &values[ep], gamma, lambda))
    }

    /// TD(0) errors over the shaped rewards and the given per-row values.
    pub fn td0(&self, values: &[f64], gamma: f64) -> Vec<f64> {
        self.per_episode(&self.rewards, |r, ep| td0_errors(r, &values[ep], gamma))
    }
}

/// Coefficients that vary during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub gamma: f64,
    pub beta_roll: f64,
    pub beta_score: f64,
}

pub struct LossOutput {
    pub parts: LossParts,
    pub grads: OutputGrads,
    /// Advantages before any normalisation.
    pub advantages: Vec<f64>,
}

fn policy_advantages(adv: &[f64], cfg: &AlgoConfig) -> Vec<f64> {
    if cfg.normalize_advantages {
        normalize_advantages(adv)
    } else {
        adv.to_vec()
    }
}

fn finish(mut obj: Objective, out: &Outputs, batch: &Batch, cfg: &AlgoConfig, k: StepCoefficients, adv: Vec<f64>) -> LossOutput {
    match cfg.entropy_heads {
        EntropyHeads::Acting => obj.entropy_bonus(out, &batch.actions, k.beta_roll, k.beta_score),
        EntropyHeads::Both => obj.entropy_bonus_all(out, k.beta_roll, k.beta_score),
    }
    if cfg.shaping.enabled && cfg.shaping.beta_regression > 0.0 {
        obj.upper_regression(out, &batch.upper_targets, cfg.shaping.beta_regression);
    }
    let (parts, grads) = obj.finish(batch.rows());
    LossOutput { parts, grads, advantages: adv }
}

/// REINFORCE with the value head as baseline: `-log π · (G - V)` plus the
/// baseline loss, with `G` the discounted return of the shaped rewards.
pub fn reinforce_loss(out: &Outputs, batch: &Batch, cfg: &AlgoConfig, k: StepCoefficients) -> LossOutput {
    let returns = batch.returns(k.gamma);
    let adv: Vec<f64> = returns.iter().zip(&out.value).map(|(g, v)| g - v).collect();
    let mut obj = Objective::new(batch.rows(), out.roll_mode);
    obj.policy_gradient(out, &batch.actions, &policy_advantages(&adv, cfg));
    match cfg.value_loss {
        ValueLoss::Abs => obj.value_abs(out, &returns, cfg.value_coef),
        ValueLoss::Squared => obj.value_squared(out, &returns, cfg.value_coef),
    }
    finish(obj, out, batch, cfg, k, adv)
}

/// One-step actor-critic. The TD error `δ_t = r_t + γV(s_{t+1}) - V(s_t)`
/// uses the values of the same forward pass with the bootstrap held
/// constant; with `gae_lambda` set the advantage is GAE over those values.
pub fn a2c_loss(out: &Outputs, batch: &Batch, cfg: &AlgoConfig, k: StepCoefficients) -> LossOutput {
    let values = out.value.as_slice().expect("contiguous values");
    let adv = match cfg.gae_lambda {
        Some(l) => batch.gae(values, k.gamma, l),
        None => batch.td0(values, k.gamma),
    };
    let targets: Vec<f64> = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    let mut obj = Objective::new(batch.rows(), out.roll_mode);
    obj.policy_gradient(out, &batch.actions, &policy_advantages(&adv, cfg));
    obj.value_squared(out, &targets, cfg.value_coef);
    finish(obj, out, batch, cfg, k, adv)
}

/// Clipped-surrogate PPO. `advantages` are computed once per batch from the
/// behaviour values; the value target is `advantages + old values`.
pub fn ppo_loss(out: &Outputs, batch: &Batch, advantages: &[f64], cfg: &AlgoConfig, k: StepCoefficients) -> LossOutput {
    let targets: Vec<f64> = advantages.iter().zip(&batch.old_values).map(|(a, v)| a + v).collect();
    let mut obj = Objective::new(batch.rows(), out.roll_mode);
    let adv = policy_advantages(advantages, cfg);
    obj.ppo_clip(out, &batch.actions, &batch.old_log_probs, &adv, cfg.ppo_epsilon);
    obj.value_squared(out, &targets, cfg.value_coef);
    finish(obj, out, batch, cfg, k, advantages.to_vec())
}

/// Behaviour-value advantages for a PPO batch.
pub fn ppo_advantages(batch: &Batch, cfg: &AlgoConfig, gamma: f64) -> Vec<f64> {
    match cfg.gae_lambda {
        Some(l) => batch.gae(&batch.old_values, gamma, l),
        None => batch.td0(&batch.old_values, gamma),
    }
}

#[cfg(test)]
mod tests;
