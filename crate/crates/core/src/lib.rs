//! Solitaire Yahtzee as a reinforcement-learning benchmark.
//!
//! * [`game`] implements the rules and transitions.
//! * [`dp`] solves the game exactly and plays optimally.
//! * [`features`] encodes states for the network.
//! * [`nn`] is the shared-trunk policy/value network with hand-written gradients.
//! * [`algo`] holds return estimators, losses, entropy schedules and reward shaping.
//! * [`rollout`] and [`eval`] collect self-play data and compute statistics.
//! * [`train`] ties them together into a resumable training run.

pub mod algo;
pub mod config;
pub mod dp;
pub mod eval;
pub mod features;
pub mod game;
pub mod nn;
pub mod policy;
pub mod rollout;
pub mod train;
pub mod rng;
