//! Decision-making interface shared by the solver, baselines and networks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::game::{legal_actions, Action, GameState};

/// Chooses actions for a batch of live games that are all at the same step.
pub trait Policy {
    fn act_batch(&mut self, states: &[GameState]) -> Vec<Action>;
}

/// Uniform choice among legal actions.
pub struct RandomPolicy<R> {
    rng: R,
}

impl<R: Rng> RandomPolicy<R> {
    pub fn new(rng: R) -> RandomPolicy<R> {
        RandomPolicy { rng }
    }
}

impl<R: Rng> Policy for RandomPolicy<R> {
    fn act_batch(&mut self, states: &[GameState]) -> Vec<Action> {
        states
            .iter()
            .map(|s| *legal_actions(s).choose(&mut self.rng).expect("live game has a legal action"))
            .collect()
    }
}
