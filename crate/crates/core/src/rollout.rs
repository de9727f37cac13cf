//! Self-play collection and network-driven evaluation.

use std::ops::Range;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algo::{Step, Trajectory};
use crate::eval::diagnostics::{bernoulli_kl, categorical_kl};
use crate::eval::{simulate_policy, GameRecord};
use crate::features::{encode_into, feature_length, FeatureConfig, FeatureError};
use crate::game::{
    apply_action, Action, Category, GameError, GameState, KeepMask, Scorecard, NUM_CATEGORIES,
};
use crate::nn::{Network, NnError, Outputs, RollMode};
use crate::policy::Policy;
use crate::rng::{stream, Domain};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// One turn from a sampled scorecard; reward is the points written.
    SingleTurn,
    FullGame,
}

/// Episode definition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    /// Single-turn episodes always start from the empty card.
    pub empty_card_only: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig { task: Task::FullGame, empty_card_only: false }
    }
}

/// Score-head mask for a live state: the scorable boxes on the scoring
/// roll, otherwise every open box.
pub fn network_score_mask(state: &GameState) -> u16 {
    if state.rolls_used == 2 {
        state.score_mask()
    } else {
        !state.card.used_mask() & 0x1fff
    }
}

/// Encodes `states` into a row-per-state matrix with matching score masks.
pub fn encode_batch(states: &[GameState], cfg: &FeatureConfig) -> Result<(Array2<f64>, Vec<u16>), FeatureError> {
    let mut x = Array2::zeros((states.len(), feature_length(cfg)));
    for (s, mut row) in states.iter().zip(x.rows_mut()) {
        encode_into(s, cfg, row.as_slice_mut().unwrap())?;
    }
    Ok((x, states.iter().map(network_score_mask).collect()))
}

/// For each used-upper pattern (bit `f` for face `f+1`), every reachable
/// upper total with one box assignment reaching it, by increasing total.
fn upper_assignments() -> &'static [Vec<(u32, [u8; 6])>; 64] {
    static TABLE: OnceLock<[Vec<(u32, [u8; 6])>; 64]> = OnceLock::new();
    TABLE.get_or_init(|| {
        std::array::from_fn(|pattern| {
            let faces: Vec<usize> = (0..6).filter(|f| pattern >> f & 1 == 1).collect();
            let mut found: Vec<(u32, [u8; 6])> = Vec::new();
            let mut counts = vec![0u8; faces.len()];
            loop {
                let mut boxes = [0u8; 6];
                let mut total = 0;
                for (&f, &c) in faces.iter().zip(&counts) {
                    boxes[f] = c * (f as u8 + 1);
                    total += boxes[f] as u32;
                }
                if !found.iter().any(|&(t, _)| t == total) {
                    found.push((total, boxes));
                }
                let Some(i) = counts.iter().position(|&c| c < 5) else { break };
                counts[i] += 1;
                counts[..i].iter_mut().for_each(|c| *c = 0);
            }
            found.sort_by_key(|&(t, _)| t);
            found
        })
    })
}

/// A scorecard with a uniformly drawn set of used boxes (at least one left
/// open) and an upper total drawn uniformly from the totals those boxes can
/// hold. Used lower boxes hold zero, except a used Yahtzee box, which holds
/// 50 or 0 with equal probability.
pub fn sample_context<R: Rng + ?Sized>(rng: &mut R) -> Scorecard {
    let used: u16 = rng.gen_range(0..0x1fff);
    let options = &upper_assignments()[(used & 0x3f) as usize];
    let (_, boxes) = options[rng.gen_range(0..options.len())];
    let mut card = Scorecard::new();
    for c in Category::ALL {
        if used >> c.index() & 1 == 0 {
            continue;
        }
        let value = match c.upper_face() {
            Some(f) => boxes[f as usize - 1],
            None if c == Category::Yahtzee => {
                if rng.gen_bool(0.5) {
                    50
                } else {
                    0
                }
            }
            None => 0,
        };
        card.set(c, value).expect("values are valid for their boxes");
    }
    card
}

fn start_state(task: &TaskConfig, seed: u64, game: u64, dice: &mut ChaCha8Rng) -> GameState {
    match task.task {
        Task::FullGame => GameState::new_game(dice),
        Task::SingleTurn if task.empty_card_only => GameState::new_game(dice),
        Task::SingleTurn => {
            let card = sample_context(&mut stream(seed, Domain::Context, game));
            GameState::from_card(card, dice)
        }
    }
}

fn sampled_action(out: &Outputs, row: usize, state: &GameState, rng: &mut ChaCha8Rng) -> (Action, f64) {
    if state.rolls_used < 2 {
        let m = out.sample_roll(row, rng);
        (Action::Keep(KeepMask::new(m).unwrap()), out.roll_log_prob(row, m))
    } else {
        let c = out.sample_score(row, rng);
        (Action::Score(Category::from_index(c).unwrap()), out.score_log_prob(row, c))
    }
}

/// Plays games `games` in lockstep with actions sampled from the network,
/// recording everything the learners need. Game `g` draws dice from
/// `(seed, Dice, g)` and actions from `(seed, Policy, g)`. With `dropout`
/// the network runs in training mode, with masks drawn from
/// `(seed, RolloutDropout, first game)`; otherwise in evaluation mode.
pub fn collect_batch(
    net: &Network,
    features: &FeatureConfig,
    task: &TaskConfig,
    seed: u64,
    games: Range<u64>,
    dropout: bool,
) -> Result<Vec<Trajectory>, RolloutError> {
    let mut dropout_rng = dropout.then(|| stream(seed, Domain::RolloutDropout, games.start));
    let ids: Vec<u64> = games.collect();
    let mut dice: Vec<ChaCha8Rng> = ids.iter().map(|&g| stream(seed, Domain::Dice, g)).collect();
    let mut acts: Vec<ChaCha8Rng> = ids.iter().map(|&g| stream(seed, Domain::Policy, g)).collect();
    let mut states: Vec<GameState> = ids
        .iter()
        .zip(dice.iter_mut())
        .map(|(&g, d)| start_state(task, seed, g, d))
        .collect();
    let mut trajs: Vec<Trajectory> = ids
        .iter()
        .map(|&game| Trajectory { game, steps: Vec::new(), upper_total: 0, score: 0 })
        .collect();
    let mut live: Vec<usize> = (0..ids.len()).collect();
    let mut done = vec![false; ids.len()];
    while !live.is_empty() {
        let batch: Vec<GameState> = live.iter().map(|&i| states[i]).collect();
        let (x, masks) = encode_batch(&batch, features)?;
        let out = match dropout_rng.as_mut() {
            Some(rng) => net.forward(x.view(), &masks, Some(rng))?.0,
            None => net.infer(x.view(), &masks)?,
        };
        for (row, &i) in live.iter().enumerate() {
            let (action, log_prob) = sampled_action(&out, row, &states[i], &mut acts[i]);
            let t = apply_action(&states[i], action, &mut dice[i])?;
            let reward = match task.task {
                Task::FullGame => t.reward,
                Task::SingleTurn => t.points,
            };
            trajs[i].steps.push(Step {
                features: x.row(row).to_vec(),
                action,
                score_mask: masks[row],
                log_prob,
                reward: reward as f64,
                value: out.value[row],
                upper_pred: out.upper[row],
            });
            trajs[i].score += reward;
            done[i] = match (task.task, action) {
                (Task::SingleTurn, Action::Score(_)) => true,
                _ => t.next.is_terminal(),
            };
            if done[i] {
                trajs[i].upper_total = t.next.card.upper_total();
            }
            states[i] = t.next;
        }
        live.retain(|&i| !done[i]);
    }
    Ok(trajs)
}

/// Deterministic play: the most probable legal action, ties to the lowest ordinal.
pub struct NetworkPolicy<'a> {
    pub net: &'a Network,
    pub features: &'a FeatureConfig,
}

impl NetworkPolicy<'_> {
    pub fn try_act(&self, states: &[GameState]) -> Result<Vec<Action>, RolloutError> {
        let (x, masks) = encode_batch(states, self.features)?;
        let out = self.net.infer(x.view(), &masks)?;
        Ok(states
            .iter()
            .enumerate()
            .map(|(row, s)| {
                if s.rolls_used < 2 {
                    Action::Keep(KeepMask::new(out.argmax_roll(row)).unwrap())
                } else {
                    Action::Score(Category::from_index(out.argmax_score(row)).unwrap())
                }
            })
            .collect())
    }
}

impl Policy for NetworkPolicy<'_> {
    fn act_batch(&mut self, states: &[GameState]) -> Vec<Action> {
        self.try_act(states).expect("states and network were validated together")
    }
}

/// Full games under argmax play.
pub fn evaluate_network(
    net: &Network,
    features: &FeatureConfig,
    n_games: u64,
    seed: u64,
) -> Result<Vec<GameRecord>, RolloutError> {
    if feature_length(features) != net.input_width() {
        return Err(NnError::InputWidth { got: feature_length(features), expected: net.input_width() }.into());
    }
    Ok(simulate_policy(|_| NetworkPolicy { net, features }, n_games, seed)?)
}

/// Mean points of argmax single-turn episodes.
pub fn evaluate_single_turn(
    net: &Network,
    features: &FeatureConfig,
    empty_card_only: bool,
    n_games: u64,
    seed: u64,
) -> Result<f64, RolloutError> {
    let task = TaskConfig { task: Task::SingleTurn, empty_card_only };
    let policy = NetworkPolicy { net, features };
    let mut total = 0u64;
    let mut start = 0;
    while start < n_games {
        let end = (start + 250).min(n_games);
        let mut dice: Vec<ChaCha8Rng> = (start..end).map(|g| stream(seed, Domain::Dice, g)).collect();
        let mut states: Vec<GameState> =
            (start..end).zip(dice.iter_mut()).map(|(g, d)| start_state(&task, seed, g, d)).collect();
        for _ in 0..3 {
            let actions = policy.try_act(&states)?;
            for (i, a) in actions.into_iter().enumerate() {
                let t = apply_action(&states[i], a, &mut dice[i])?;
                if let Action::Score(_) = a {
                    total += t.points as u64;
                }
                states[i] = t.next;
            }
        }
        start = end;
    }
    Ok(total as f64 / n_games.max(1) as f64)
}

/// Fixed set of states for comparing policies, drawn by random play.
pub struct ProbeSet {
    pub x: Array2<f64>,
    pub masks: Vec<u16>,
}

pub const PROBE_STATES: usize = 1024;

impl ProbeSet {
    /// State `i` is reached by `i mod 39` uniformly random legal moves.
    pub fn new(features: &FeatureConfig, seed: u64, n: usize) -> Result<ProbeSet, RolloutError> {
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream(seed, Domain::Probe, i as u64);
            let mut s = GameState::new_game(&mut rng);
            for _ in 0..i % 39 {
                let legal = crate::game::legal_actions(&s);
                let a = legal[rng.gen_range(0..legal.len())];
                s = apply_action(&s, a, &mut rng)?.next;
            }
            states.push(s);
        }
        let (x, masks) = encode_batch(&states, features)?;
        Ok(ProbeSet { x, masks })
    }

    pub fn outputs(&self, net: &Network) -> Result<Outputs, NnError> {
        net.infer(self.x.view(), &self.masks)
    }
}

/// Mean over rows of `KL(old || new)` summed over the roll and score heads.
pub fn policy_kl(old: &Outputs, new: &Outputs) -> f64 {
    let rows = old.rows();
    if rows == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..rows {
        total += match old.roll_mode {
            RollMode::Categorical32 => categorical_kl(
                old.roll_probs.row(i).as_slice().unwrap(),
                new.roll_probs.row(i).as_slice().unwrap(),
            ),
            RollMode::Bernoulli5 => bernoulli_kl(
                old.roll_probs.row(i).as_slice().unwrap(),
                new.roll_probs.row(i).as_slice().unwrap(),
            ),
        };
        let legal = |o: &Outputs| -> Vec<f64> {
            (0..NUM_CATEGORIES).filter(|&c| old.score_masks[i] >> c & 1 == 1).map(|c| o.score_probs[[i, c]]).collect()
        };
        total += categorical_kl(&legal(old), &legal(new));
    }
    total / rows as f64
}

#[cfg(test)]
mod tests;
