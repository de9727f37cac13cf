//! Entropy-coefficient and discount schedules.

use serde::{Deserialize, Serialize};

/// Named entropy settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyRegime {
    None,
    Low,
    Baseline,
    High,
}

/// Hold-then-decay schedule for the two entropy weights. `hold` and
/// `anneal` are fractions of training: the weights stay at their maxima
/// until `hold`, fall linearly to their minima at `anneal`, then stay there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySchedule {
    pub roll_max: f64,
    pub roll_min: f64,
    pub score_max: f64,
    pub score_min: f64,
    pub hold: f64,
    pub anneal: f64,
}

impl EntropySchedule {
    pub fn regime(regime: EntropyRegime) -> EntropySchedule {
        let (roll_max, roll_min, score_max, score_min, hold, anneal) = match regime {
            EntropyRegime::None => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            EntropyRegime::Low => (0.05, 0.01, 0.01, 0.005, 0.2, 0.4),
            EntropyRegime::Baseline => (0.1, 0.02, 0.03, 0.01, 0.3, 0.6),
            EntropyRegime::High => (0.2, 0.04, 0.06, 0.02, 0.35, 0.65),
        };
        EntropySchedule { roll_max, roll_min, score_max, score_min, hold, anneal }
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = [self.roll_max, self.roll_min, self.score_max, self.score_min];
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err("entropy weights must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.hold) || !(self.hold..=1.0).contains(&self.anneal) {
            return Err("entropy fractions must satisfy 0 <= hold <= anneal <= 1".into());
        }
        Ok(())
    }
}

/// `(β_roll, β_score)` at `step` of `total`.
pub fn entropy_coefficients(step: u64, total: u64, s: &EntropySchedule) -> (f64, f64) {
    let f = if total == 0 { 0.0 } else { step.min(total) as f64 / total as f64 };
    let t = if f <= s.hold {
        0.0
    } else if f >= s.anneal {
        1.0
    } else {
        (f - s.hold) / (s.anneal - s.hold)
    };
    let lerp = |max: f64, min: f64| max * (1.0 - t) + min * t;
    (lerp(s.roll_max, s.roll_min), lerp(s.score_max, s.score_min))
}

/// Discount at `step` of `total`, linear from `min` to `max`.
pub fn gamma_at(step: u64, total: u64, min: f64, max: f64) -> f64 {
    if total == 0 {
        return max;
    }
    min + (max - min) * (step.min(total) as f64 / total as f64)
}
