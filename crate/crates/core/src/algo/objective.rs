//! Loss terms over a batch of network outputs.
//!
//! Each term adds its summed value to [`LossParts`] and its gradient with
//! respect to the network outputs to [`OutputGrads`]. [`Objective::finish`]
//! divides both by the row count so the loss is a per-step mean.

use serde::{Deserialize, Serialize};

use crate::game::Action;
use crate::nn::{OutputGrads, Outputs, RollMode};

/// Per-step mean of each loss component. `entropy` is the bonus that was
/// subtracted, so `total = policy + value + upper - entropy`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub upper: f64,
    pub total: f64,
}

pub struct Objective {
    parts: LossParts,
    grads: OutputGrads,
}

impl Objective {
    pub fn new(rows: usize, roll_mode: RollMode) -> Objective {
        Objective { parts: LossParts::default(), grads: OutputGrads::zeros(rows, roll_mode) }
    }

    fn log_prob(out: &Outputs, row: usize, action: Action) -> f64 {
        match action {
            Action::Keep(m) => out.roll_log_prob(row, m.bits()),
            Action::Score(c) => out.score_log_prob(row, c.index()),
        }
    }

    fn add_log_prob_grad(&mut self, out: &Outputs, row: usize, action: Action, coef: f64) {
        match action {
            Action::Keep(m) => out.add_roll_log_prob_grad(row, m.bits(), coef, &mut self.grads.roll_logits),
            Action::Score(c) => out.add_score_log_prob_grad(row, c.index(), coef, &mut self.grads.score_logits),
        }
    }

    /// `Σ -log π(a_t|s_t) · A_t` with the advantages held constant.
    pub fn policy_gradient(&mut self, out: &Outputs, actions: &[Action], adv: &[f64]) {
        for (row, (&a, &adv)) in actions.iter().zip(adv).enumerate() {
            self.parts.policy -= Self::log_prob(out, row, a) * adv;
            self.add_log_prob_grad(out, row, a, -adv);
        }
    }

    /// Clipped surrogate `Σ -min(ρA, clip(ρ, 1-ε, 1+ε)A)` with
    /// `ρ = π(a|s) / π_old(a|s)`.
    pub fn ppo_clip(&mut self, out: &Outputs, actions: &[Action], old_log_probs: &[f64], adv: &[f64], eps: f64) {
        for (row, &a) in actions.iter().enumerate() {
            let ratio = (Self::log_prob(out, row, a) - old_log_probs[row]).exp();
            let unclipped = ratio * adv[row];
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv[row];
            if unclipped <= clipped {
                self.parts.policy -= unclipped;
                self.add_log_prob_grad(out, row, a, -adv[row] * ratio);
            } else {
                self.parts.policy -= clipped;
            }
        }
    }

    /// `coef · Σ (V(s_t) - y_t)²` with constant targets.
    pub fn value_squared(&mut self, out: &Outputs, targets: &[f64], coef: f64) {
        for (row, &y) in targets.iter().enumerate() {
            let e = out.value[row] - y;
            self.parts.value += coef * e * e;
            self.grads.value[row] += 2.0 * coef * e;
        }
    }

    /// `coef · Σ |V(s_t) - y_t|` with constant targets.
    pub fn value_abs(&mut self, out: &Outputs, targets: &[f64], coef: f64) {
        for (row, &y) in targets.iter().enumerate() {
            let e = out.value[row] - y;
            self.parts.value += coef * e.abs();
            self.grads.value[row] += coef * if e > 0.0 { 1.0 } else if e < 0.0 { -1.0 } else { 0.0 };
        }
    }

    /// Subtracts `β_roll H[π_roll]` on keep steps and `β_score H[π_score]` on
    /// scoring steps.
    pub fn entropy_bonus(&mut self, out: &Outputs, actions: &[Action], beta_roll: f64, beta_score: f64) {
        for (row, a) in actions.iter().enumerate() {
            match a {
                Action::Keep(_) if beta_roll != 0.0 => {
                    self.parts.entropy += beta_roll * out.roll_entropy(row);
                    out.add_roll_entropy_grad(row, -beta_roll, &mut self.grads.roll_logits);
                }
                Action::Score(_) if beta_score != 0.0 => {
                    self.parts.entropy += beta_score * out.score_entropy(row);
                    out.add_score_entropy_grad(row, -beta_score, &mut self.grads.score_logits);
                }
                _ => {}
            }
        }
    }

    /// Entropy of both heads on every row.
    pub fn entropy_bonus_all(&mut self, out: &Outputs, beta_roll: f64, beta_score: f64) {
        for row in 0..out.rows() {
            if beta_roll != 0.0 {
                self.parts.entropy += beta_roll * out.roll_entropy(row);
                out.add_roll_entropy_grad(row, -beta_roll, &mut self.grads.roll_logits);
            }
            if beta_score != 0.0 {
                self.parts.entropy += beta_score * out.score_entropy(row);
                out.add_score_entropy_grad(row, -beta_score, &mut self.grads.score_logits);
            }
        }
    }

    /// `coef · Σ (Û(s_t) - U_norm)²`.
    pub fn upper_regression(&mut self, out: &Outputs, targets: &[f64], coef: f64) {
        for (row, &y) in targets.iter().enumerate() {
            let e = out.upper[row] - y;
            self.parts.upper += coef * e * e;
            self.grads.upper[row] += 2.0 * coef * e;
        }
    }

    /// Per-step means of the loss and of its output gradients.
    pub fn finish(mut self, rows: usize) -> (LossParts, OutputGrads) {
        let s = 1.0 / rows.max(1) as f64;
        let p = &mut self.parts;
        p.policy *= s;
        p.value *= s;
        p.entropy *= s;
        p.upper *= s;
        p.total = p.policy + p.value + p.upper - p.entropy;
        let g = &mut self.grads;
        g.roll_logits *= s;
        g.score_logits *= s;
        g.value *= s;
        g.upper *= s;
        (self.parts, self.grads)
    }
}
