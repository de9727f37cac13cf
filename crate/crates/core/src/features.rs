//! Observation encoding.
//!
//! Block order, each block present only when enabled:
//!
//! | block          | size | content                                              |
//! |----------------|------|------------------------------------------------------|
//! | dice one-hot   | 30   | one 6-way one-hot per sorted die                     |
//! | face counts    | 6    | count of each face / 5                               |
//! | category mask  | 13   | 1 for each used box                                  |
//! | bonus progress | 1    | min(upper total / 63, 1)                             |
//! | rolls          | 3    | one-hot of rolls used this turn                      |
//! | game progress  | 1    | boxes filled / 12                                    |
//! | joker          | 1    | 1 when the dice are a Yahtzee and its box is used    |
//! | lock-in        | 6    | 1 when scoring face k now would reach 63 upper       |
//! | potential      | 13   | open boxes' raw score for these dice / 50            |
//!
//! The dice blocks follow `dice_mode`; the category mask and rolls blocks are
//! always present. Every feature lies in `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    category_score, face_counts, joker_active, Category, GameState, NUM_CATEGORIES, NUM_DICE,
    NUM_FACES, UPPER_BONUS_THRESHOLD,
};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("terminal states are not encoded")]
    Terminal,
    #[error("feature buffer has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiceMode {
    Onehot,
    Bin,
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub dice_mode: DiceMode,
    pub include_bonus_progress: bool,
    pub include_game_progress: bool,
    pub include_joker: bool,
    pub include_lockin: bool,
    pub include_potential: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dice_mode: DiceMode::Combined,
            include_bonus_progress: true,
            include_game_progress: true,
            include_joker: true,
            include_lockin: true,
            include_potential: false,
        }
    }
}

impl FeatureConfig {
    fn onehot(&self) -> bool {
        self.dice_mode != DiceMode::Bin
    }

    fn bin(&self) -> bool {
        self.dice_mode != DiceMode::Onehot
    }
}

pub fn feature_length(cfg: &FeatureConfig) -> usize {
    let mut n = NUM_CATEGORIES + 3;
    n += if cfg.onehot() { NUM_DICE * NUM_FACES } else { 0 };
    n += if cfg.bin() { NUM_FACES } else { 0 };
    n += cfg.include_bonus_progress as usize;
    n += cfg.include_game_progress as usize;
    n += cfg.include_joker as usize;
    n += if cfg.include_lockin { 6 } else { 0 };
    n += if cfg.include_potential { NUM_CATEGORIES } else { 0 };
    n
}

/// Writes the encoding of `state` into `out`, which must have length
/// [`feature_length`].
pub fn encode_into(state: &GameState, cfg: &FeatureConfig, out: &mut [f64]) -> Result<(), FeatureError> {
    if state.is_terminal() {
        return Err(FeatureError::Terminal);
    }
    let expected = feature_length(cfg);
    if out.len() != expected {
        return Err(FeatureError::Length { got: out.len(), expected });
    }
    out.fill(0.0);
    let faces = state.dice.faces();
    let counts = face_counts(&state.dice);
    let card = &state.card;
    let mut i = 0;

    if cfg.onehot() {
        for (d, &f) in faces.iter().enumerate() {
            out[i + d * NUM_FACES + (f as usize - 1)] = 1.0;
        }
        i += NUM_DICE * NUM_FACES;
    }
    if cfg.bin() {
        for f in 0..NUM_FACES {
            out[i + f] = counts.0[f] as f64 / NUM_DICE as f64;
        }
        i += NUM_FACES;
    }
    for c in Category::ALL {
        out[i + c.index()] = card.is_used(c) as u8 as f64;
    }
    i += NUM_CATEGORIES;
    let upper = card.upper_total();
    if cfg.include_bonus_progress {
        out[i] = (upper as f64 / UPPER_BONUS_THRESHOLD as f64).min(1.0);
        i += 1;
    }
    out[i + state.rolls_used as usize] = 1.0;
    i += 3;
    if cfg.include_game_progress {
        out[i] = card.filled() as f64 / 12.0;
        i += 1;
    }
    if cfg.include_joker {
        out[i] = joker_active(&state.dice, card) as u8 as f64;
        i += 1;
    }
    if cfg.include_lockin {
        for k in 0..6 {
            let cat = Category::ALL[k];
            out[i + k] = (upper + category_score(&state.dice, cat) >= UPPER_BONUS_THRESHOLD) as u8 as f64;
        }
        i += 6;
    }
    if cfg.include_potential {
        for c in Category::ALL {
            if !card.is_used(c) {
                out[i + c.index()] = category_score(&state.dice, c) as f64 / 50.0;
            }
        }
        i += NUM_CATEGORIES;
    }
    debug_assert_eq!(i, expected);
    Ok(())
}

pub fn encode(state: &GameState, cfg: &FeatureConfig) -> Result<Vec<f64>, FeatureError> {
    let mut out = vec![0.0; feature_length(cfg)];
    encode_into(state, cfg, &mut out)?;
    Ok(out)
}
