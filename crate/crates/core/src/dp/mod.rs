//! Exact solitaire Yahtzee solver.
//!
//! Between turns the game is summarised by a [`MacroState`]: which boxes are
//! used, the upper-section total capped at 63, and whether the Yahtzee box
//! holds 50. Banked points are additive, so the expected remaining score of a
//! macro-state is all the solver needs. Each entry is filled by evaluating the
//! turn widget (roll, keep, roll, keep, roll, score) by backward induction
//! against entries with more used boxes.

mod cache;
mod tables;

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::game::{
    joker_points, scorable_for, Action, Category, GameState, KeepMask, Scorecard, NUM_CATEGORIES,
    NUM_KEEP_MASKS, UPPER_BONUS, UPPER_BONUS_THRESHOLD, YAHTZEE_BONUS,
};
use crate::policy::Policy;

pub use cache::{load_table, save_table, CACHE_MAGIC, CACHE_VERSION};
pub use tables::{keep_transition_prob, DiceTables, NUM_KEEPS, NUM_ROLLS};

pub const NUM_MACRO_STATES: usize = 1 << 20;
const FULL_MASK: u16 = 0x1fff;
const YAHTZEE_BIT: u16 = 1 << 11;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("no action exists in a finished game")]
    Terminal,
    #[error("value table cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scorecard aggregate sufficient for optimal play.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MacroState {
    pub used: u16,
    pub upper: u8,
    pub bonus_eligible: bool,
}

impl MacroState {
    pub const START: MacroState = MacroState {
        used: 0,
        upper: 0,
        bonus_eligible: false,
    };

    pub fn from_card(card: &Scorecard) -> MacroState {
        MacroState {
            used: card.used_mask(),
            upper: card.upper_total().min(UPPER_BONUS_THRESHOLD) as u8,
            bonus_eligible: card.yahtzee_bonus_eligible(),
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        (self.used as usize) << 7 | (self.upper as usize) << 1 | self.bonus_eligible as usize
    }

    pub fn from_index(i: usize) -> MacroState {
        MacroState {
            used: (i >> 7) as u16,
            upper: (i >> 1 & 0x3f) as u8,
            bonus_eligible: i & 1 == 1,
        }
    }

    pub fn is_final(self) -> bool {
        self.used == FULL_MASK
    }

    /// Successor after writing `points` into `cat`, with the upper bonus this
    /// entry triggers (35 or 0).
    #[inline]
    pub fn after(self, cat: Category, points: u32) -> (MacroState, u32) {
        let mut next = self;
        next.used |= 1 << cat.index();
        let mut bonus = 0;
        if cat.is_upper() {
            let total = self.upper as u32 + points;
            if (self.upper as u32) < UPPER_BONUS_THRESHOLD && total >= UPPER_BONUS_THRESHOLD {
                bonus = UPPER_BONUS;
            }
            next.upper = total.min(UPPER_BONUS_THRESHOLD) as u8;
        }
        if cat == Category::Yahtzee {
            next.bonus_eligible = points == 50;
        }
        (next, bonus)
    }
}

/// Expected remaining score for every macro-state.
#[derive(Clone)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn from_values(values: Vec<f64>) -> Option<ValueTable> {
        (values.len() == NUM_MACRO_STATES).then_some(ValueTable { values })
    }

    #[inline]
    pub fn value(&self, m: MacroState) -> f64 {
        self.values[m.index()]
    }

    /// Expected final score from the start of a game.
    pub fn start_value(&self) -> f64 {
        self.value(MacroState::START)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl std::fmt::Debug for ValueTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueTable")
            .field("states", &self.values.len())
            .field("start_value", &self.start_value())
            .finish()
    }
}

/// Within-turn backward induction for one macro-state.
///
/// Roll layers hold the value of seeing each of the 252 outcomes with the
/// given number of re-rolls used; keep layers hold the expected value of each
/// of the 462 kept multisets before the next roll.
#[derive(Clone, Debug)]
pub struct TurnWidget {
    pub state: MacroState,
    pub roll2: Vec<f64>,
    pub keep2: Vec<f64>,
    pub roll1: Vec<f64>,
    pub keep1: Vec<f64>,
    pub roll0: Vec<f64>,
    pub value: f64,
}

impl TurnWidget {
    fn empty(state: MacroState) -> TurnWidget {
        TurnWidget {
            state,
            roll2: vec![0.0; NUM_ROLLS],
            keep2: vec![0.0; NUM_KEEPS],
            roll1: vec![0.0; NUM_ROLLS],
            keep1: vec![0.0; NUM_KEEPS],
            roll0: vec![0.0; NUM_ROLLS],
            value: 0.0,
        }
    }

    /// Evaluates the widget; `future` gives the value of a successor macro-state.
    pub fn compute<F: Fn(MacroState) -> f64>(state: MacroState, future: F) -> TurnWidget {
        let mut w = TurnWidget::empty(state);
        w.fill(&future);
        w
    }

    fn fill<F: Fn(MacroState) -> f64>(&mut self, future: &F) {
        let t = DiceTables::get();
        let state = self.state;
        if state.is_final() {
            self.roll2.fill(0.0);
            self.keep2.fill(0.0);
            self.roll1.fill(0.0);
            self.keep1.fill(0.0);
            self.roll0.fill(0.0);
            self.value = 0.0;
            return;
        }
        for r in 0..NUM_ROLLS {
            self.roll2[r] = best_score(t, state, r, future).1;
        }
        expect(t, &self.roll2, &mut self.keep2);
        maximise(t, &self.keep2, &mut self.roll1);
        expect(t, &self.roll1, &mut self.keep1);
        maximise(t, &self.keep1, &mut self.roll0);
        let (targets, probs) = t.row(t.empty_keep());
        self.value = targets
            .iter()
            .zip(probs)
            .map(|(&r, &p)| p * self.roll0[r as usize])
            .sum();
    }

    /// Expected value of choosing `action` with `rolls_used` re-rolls spent.
    pub fn action_value(&self, roll: usize, rolls_used: u8, action: Action, future: impl Fn(MacroState) -> f64) -> f64 {
        let t = DiceTables::get();
        match action {
            Action::Keep(mask) => {
                let k = t.keep_of[roll * NUM_KEEP_MASKS + mask.bits() as usize] as usize;
                if rolls_used == 0 {
                    self.keep1[k]
                } else {
                    self.keep2[k]
                }
            }
            Action::Score(cat) => score_value(t, self.state, roll, cat, &future),
        }
    }
}

fn joker_face(t: &DiceTables, state: MacroState, roll: usize) -> Option<u8> {
    let dice = &t.rolls[roll];
    (dice.is_yahtzee() && state.used & YAHTZEE_BIT != 0).then(|| dice.faces()[0])
}

#[inline]
fn score_value<F: Fn(MacroState) -> f64>(t: &DiceTables, state: MacroState, roll: usize, cat: Category, future: &F) -> f64 {
    let joker = joker_face(t, state, roll).is_some();
    let points = if joker {
        joker_points(&t.roll_counts[roll], t.rolls[roll].sum(), cat, true)
    } else {
        t.score(roll, cat)
    };
    let extra = if joker && state.bonus_eligible { YAHTZEE_BONUS } else { 0 };
    let (next, upper_bonus) = state.after(cat, points);
    (points + extra + upper_bonus) as f64 + future(next)
}

/// Best scoring category for a roll; ties go to the lowest category index.
fn best_score<F: Fn(MacroState) -> f64>(t: &DiceTables, state: MacroState, roll: usize, future: &F) -> (Category, f64) {
    let allowed = scorable_for(state.used, joker_face(t, state, roll));
    let mut best = (Category::Chance, f64::NEG_INFINITY);
    for cat in Category::ALL {
        if allowed >> cat.index() & 1 == 1 {
            let v = score_value(t, state, roll, cat, future);
            if v > best.1 {
                best = (cat, v);
            }
        }
    }
    best
}

fn expect(t: &DiceTables, roll_values: &[f64], keep_values: &mut [f64]) {
    for (k, out) in keep_values.iter_mut().enumerate() {
        let (targets, probs) = t.row(k);
        *out = targets
            .iter()
            .zip(probs)
            .map(|(&r, &p)| p * roll_values[r as usize])
            .sum();
    }
}

fn maximise(t: &DiceTables, keep_values: &[f64], roll_values: &mut [f64]) {
    for (r, out) in roll_values.iter_mut().enumerate() {
        *out = t.choices[r]
            .iter()
            .map(|&(k, _)| keep_values[k as usize])
            .fold(f64::NEG_INFINITY, f64::max);
    }
}

/// Expected value of entering a turn in `state`, given a table that is
/// already solved for every state with more used boxes.
pub fn turn_widget(state: MacroState, table: &ValueTable) -> f64 {
    TurnWidget::compute(state, |m| table.value(m)).value
}

/// Solves every macro-state by backward induction over the number of used boxes.
pub fn solve() -> ValueTable {
    let mut values = vec![0.0f64; NUM_MACRO_STATES];
    let mut by_count: Vec<Vec<u16>> = vec![Vec::new(); NUM_CATEGORIES + 1];
    for used in 0..=FULL_MASK {
        by_count[used.count_ones() as usize].push(used);
    }
    for count in (0..NUM_CATEGORIES).rev() {
        let started = Instant::now();
        let indices: Vec<usize> = by_count[count]
            .iter()
            .flat_map(|&used| (0..128usize).map(move |low| (used as usize) << 7 | low))
            .collect();
        let snapshot = &values;
        let layer: Vec<f64> = indices
            .par_iter()
            .map_init(
                || TurnWidget::empty(MacroState::START),
                |w, &i| {
                    w.state = MacroState::from_index(i);
                    w.fill(&|m: MacroState| snapshot[m.index()]);
                    w.value
                },
            )
            .collect();
        for (&i, v) in indices.iter().zip(layer) {
            values[i] = v;
        }
        log_layer(count, indices.len(), started);
    }
    ValueTable { values }
}

fn log_layer(count: usize, states: usize, started: Instant) {
    if std::env::var_os("YAHTZEE_DP_VERBOSE").is_some() {
        eprintln!(
            "dp: {count:2} used boxes, {states:7} states, {:.2}s",
            started.elapsed().as_secs_f64()
        );
    }
}

/// Highest-value action at a state; ties go to the lowest action ordinal.
pub fn optimal_action(state: &GameState, table: &ValueTable) -> Result<Action, DpError> {
    if state.is_terminal() {
        return Err(DpError::Terminal);
    }
    let widget = TurnWidget::compute(MacroState::from_card(&state.card), |m| table.value(m));
    Ok(best_action(&widget, state, |m| table.value(m)))
}

fn best_action(widget: &TurnWidget, state: &GameState, future: impl Fn(MacroState) -> f64) -> Action {
    let t = DiceTables::get();
    let roll = t.roll_index(&state.dice);
    if state.rolls_used == 2 {
        return Action::Score(best_score(t, widget.state, roll, &future).0);
    }
    let layer = if state.rolls_used == 0 { &widget.keep1 } else { &widget.keep2 };
    let mut best = (0u8, f64::NEG_INFINITY);
    for mask in 0..NUM_KEEP_MASKS as u8 {
        let v = layer[t.keep_of[roll * NUM_KEEP_MASKS + mask as usize] as usize];
        if v > best.1 {
            best = (mask, v);
        }
    }
    Action::Keep(KeepMask::new(best.0).unwrap())
}

/// Widgets of the macro-states seen during the current turn.
///
/// Games played in lockstep are all on the same turn, so the cache is
/// dropped whenever the number of filled boxes changes.
#[derive(Default)]
struct WidgetCache {
    filled: usize,
    widgets: HashMap<MacroState, TurnWidget>,
}

impl WidgetCache {
    fn get(&mut self, state: &GameState, future: impl Fn(MacroState) -> f64) -> &TurnWidget {
        let filled = state.card.filled();
        if filled != self.filled {
            self.widgets.clear();
            self.filled = filled;
        }
        let m = MacroState::from_card(&state.card);
        self.widgets.entry(m).or_insert_with(|| TurnWidget::compute(m, future))
    }
}

/// Optimal play from a solved table.
pub struct DpPolicy<'a> {
    table: &'a ValueTable,
    cache: WidgetCache,
}

impl<'a> DpPolicy<'a> {
    pub fn new(table: &'a ValueTable) -> DpPolicy<'a> {
        DpPolicy { table, cache: WidgetCache::default() }
    }

    pub fn act(&mut self, state: &GameState) -> Action {
        let table = self.table;
        let widget = self.cache.get(state, |s| table.value(s));
        best_action(widget, state, |s| table.value(s))
    }
}

impl Policy for DpPolicy<'_> {
    fn act_batch(&mut self, states: &[GameState]) -> Vec<Action> {
        states.iter().map(|s| self.act(s)).collect()
    }
}

/// Maximises the points banked this turn and ignores the rest of the game.
#[derive(Default)]
pub struct GreedyTurnPolicy {
    cache: WidgetCache,
}

impl GreedyTurnPolicy {
    pub fn act(&mut self, state: &GameState) -> Action {
        let widget = self.cache.get(state, |_| 0.0);
        best_action(widget, state, |_| 0.0)
    }
}

impl Policy for GreedyTurnPolicy {
    fn act_batch(&mut self, states: &[GameState]) -> Vec<Action> {
        states.iter().map(|s| self.act(s)).collect()
    }
}

/// Best expected points obtainable in a single turn from `card`, counting
/// bonuses triggered by the entry but nothing after it.
pub fn single_turn_optimum(card: &Scorecard) -> f64 {
    TurnWidget::compute(MacroState::from_card(card), |_| 0.0).value
}

/// Exact expected points of the scoring step, used by tests and analysis.
pub fn immediate_points(state: &GameState, cat: Category) -> f64 {
    let t = DiceTables::get();
    score_value(
        t,
        MacroState::from_card(&state.card),
        t.roll_index(&state.dice),
        cat,
        &|_| 0.0,
    )
}
