//! Solitaire Yahtzee rules: dice, scorecard, scoring, legality and transitions.
//!
//! Dice are always held in ascending order, so a keep mask refers to sorted
//! positions. Joker scoring follows the standard rulebook: a Yahtzee rolled
//! after the Yahtzee box is filled pays a 100-point bonus when that box holds
//! 50, must go into the matching upper box when it is open, otherwise into any
//! open lower box at full value, and only then zeroes an open upper box.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_DICE: usize = 5;
pub const NUM_FACES: usize = 6;
pub const NUM_CATEGORIES: usize = 13;
pub const NUM_KEEP_MASKS: usize = 32;
/// Decisions per turn: two keep choices and one scoring choice.
pub const STEPS_PER_TURN: usize = 3;
pub const STEPS_PER_GAME: usize = STEPS_PER_TURN * NUM_CATEGORIES;
pub const UPPER_BONUS_THRESHOLD: u32 = 63;
pub const UPPER_BONUS: u32 = 35;
pub const YAHTZEE_BONUS: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("invalid die face {0}; faces must lie in 1..=6")]
    InvalidFace(u8),
    #[error("illegal move {action} at roll {rolls_used}: {reason}")]
    IllegalMove {
        action: String,
        rolls_used: u8,
        reason: &'static str,
    },
    #[error("game is already over")]
    Terminal,
    #[error("score {value} is not attainable in {category}")]
    InvalidEntry { category: Category, value: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Ones,
    Twos,
    Threes,
    Fours,
    Fives,
    Sixes,
    ThreeOfAKind,
    FourOfAKind,
    FullHouse,
    SmallStraight,
    LargeStraight,
    Yahtzee,
    Chance,
}

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::Ones,
        Category::Twos,
        Category::Threes,
        Category::Fours,
        Category::Fives,
        Category::Sixes,
        Category::ThreeOfAKind,
        Category::FourOfAKind,
        Category::FullHouse,
        Category::SmallStraight,
        Category::LargeStraight,
        Category::Yahtzee,
        Category::Chance,
    ];

    /// Zero-based position, also the bit used in category masks.
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Rulebook ordinal in 1..=13.
    #[inline]
    pub fn ordinal(self) -> usize {
        self as usize + 1
    }

    #[inline]
    pub fn from_index(index: usize) -> Option<Category> {
        Category::ALL.get(index).copied()
    }

    /// Upper categories score one face; this returns that face.
    #[inline]
    pub fn upper_face(self) -> Option<u8> {
        match self.index() {
            i @ 0..=5 => Some(i as u8 + 1),
            _ => None,
        }
    }

    #[inline]
    pub fn is_upper(self) -> bool {
        self.index() < 6
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Ones => "Ones",
            Category::Twos => "Twos",
            Category::Threes => "Threes",
            Category::Fours => "Fours",
            Category::Fives => "Fives",
            Category::Sixes => "Sixes",
            Category::ThreeOfAKind => "Three of a Kind",
            Category::FourOfAKind => "Four of a Kind",
            Category::FullHouse => "Full House",
            Category::SmallStraight => "Small Straight",
            Category::LargeStraight => "Large Straight",
            Category::Yahtzee => "Yahtzee",
            Category::Chance => "Chance",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of dice showing each face, indexed by `face - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FaceCounts(pub [u8; NUM_FACES]);

impl FaceCounts {
    #[inline]
    pub fn of(&self, face: u8) -> u8 {
        self.0[face as usize - 1]
    }

    #[inline]
    pub fn max(&self) -> u8 {
        *self.0.iter().max().unwrap()
    }

    #[inline]
    pub fn total(&self) -> u8 {
        self.0.iter().sum()
    }
}

/// Five dice in ascending order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dice([u8; NUM_DICE]);

impl Dice {
    pub fn new(mut faces: [u8; NUM_DICE]) -> Result<Dice, GameError> {
        if let Some(&bad) = faces.iter().find(|&&f| !(1..=6).contains(&f)) {
            return Err(GameError::InvalidFace(bad));
        }
        faces.sort_unstable();
        Ok(Dice(faces))
    }

    pub fn roll<R: Rng + ?Sized>(rng: &mut R) -> Dice {
        let mut faces = [0u8; NUM_DICE];
        for f in faces.iter_mut() {
            *f = rng.gen_range(1..=6);
        }
        faces.sort_unstable();
        Dice(faces)
    }

    /// Re-rolls every die whose bit in `keep` is clear, then re-sorts.
    pub fn reroll<R: Rng + ?Sized>(&self, keep: KeepMask, rng: &mut R) -> Dice {
        let mut faces = self.0;
        for (i, f) in faces.iter_mut().enumerate() {
            if !keep.keeps(i) {
                *f = rng.gen_range(1..=6);
            }
        }
        faces.sort_unstable();
        Dice(faces)
    }

    #[inline]
    pub fn faces(&self) -> [u8; NUM_DICE] {
        self.0
    }

    #[inline]
    pub fn sum(&self) -> u32 {
        self.0.iter().map(|&f| f as u32).sum()
    }

    #[inline]
    pub fn is_yahtzee(&self) -> bool {
        self.0[0] == self.0[4]
    }
}

impl fmt::Display for Dice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.0;
        write!(f, "[{},{},{},{},{}]", d[0], d[1], d[2], d[3], d[4])
    }
}

pub fn face_counts(dice: &Dice) -> FaceCounts {
    let mut counts = [0u8; NUM_FACES];
    for &f in dice.0.iter() {
        counts[f as usize - 1] += 1;
    }
    FaceCounts(counts)
}

fn run_length(counts: &FaceCounts, start: usize, len: usize) -> bool {
    (start..start + len).all(|v| counts.0[v] > 0)
}

/// Raw category value for the dice, ignoring scorecard context.
pub fn category_score(dice: &Dice, cat: Category) -> u32 {
    let counts = face_counts(dice);
    score_from_counts(&counts, dice.sum(), cat)
}

pub(crate) fn score_from_counts(counts: &FaceCounts, sum: u32, cat: Category) -> u32 {
    let max = counts.max();
    match cat {
        Category::Ones
        | Category::Twos
        | Category::Threes
        | Category::Fours
        | Category::Fives
        | Category::Sixes => {
            let face = cat.index() as u32 + 1;
            face * counts.0[cat.index()] as u32
        }
        Category::ThreeOfAKind => {
            if max >= 3 {
                sum
            } else {
                0
            }
        }
        Category::FourOfAKind => {
            if max >= 4 {
                sum
            } else {
                0
            }
        }
        Category::FullHouse => {
            let three = counts.0.contains(&3);
            let two = counts.0.contains(&2);
            if three && two {
                25
            } else {
                0
            }
        }
        Category::SmallStraight => {
            if (0..3).any(|k| run_length(counts, k, 4)) {
                30
            } else {
                0
            }
        }
        Category::LargeStraight => {
            if (0..2).any(|k| run_length(counts, k, 5)) {
                40
            } else {
                0
            }
        }
        Category::Yahtzee => {
            if max == 5 {
                50
            } else {
                0
            }
        }
        Category::Chance => sum,
    }
}

/// Which of the five sorted dice to hold before a re-roll; bit `i` keeps die `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeepMask(u8);

impl KeepMask {
    pub const ALL: KeepMask = KeepMask(0b11111);
    pub const NONE: KeepMask = KeepMask(0);

    pub fn new(bits: u8) -> Option<KeepMask> {
        (bits < NUM_KEEP_MASKS as u8).then_some(KeepMask(bits))
    }

    pub fn from_bools(keep: [bool; NUM_DICE]) -> KeepMask {
        KeepMask(
            keep.iter()
                .enumerate()
                .fold(0, |acc, (i, &k)| acc | ((k as u8) << i)),
        )
    }

    #[inline]
    pub fn bits(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn keeps(self, die: usize) -> bool {
        self.0 >> die & 1 == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Keep(KeepMask),
    Score(Category),
}

impl Action {
    /// Position used for deterministic tie-breaking: keep masks by bit value,
    /// categories by index. The two kinds are never legal at the same time.
    pub fn ordinal(&self) -> usize {
        match self {
            Action::Keep(m) => m.bits() as usize,
            Action::Score(c) => c.index(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Keep(m) => write!(f, "Keep({:05b})", m.bits().reverse_bits() >> 3),
            Action::Score(c) => write!(f, "Score({c})"),
        }
    }
}

/// Recorded category scores plus the count of extra-Yahtzee bonuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Scorecard {
    entries: [Option<u8>; NUM_CATEGORIES],
    yahtzee_bonus_count: u8,
}

fn attainable(cat: Category, value: u8) -> bool {
    match cat {
        Category::Ones
        | Category::Twos
        | Category::Threes
        | Category::Fours
        | Category::Fives
        | Category::Sixes => {
            let face = cat.index() as u8 + 1;
            value % face == 0 && value <= 5 * face
        }
        Category::ThreeOfAKind | Category::FourOfAKind | Category::Chance => {
            value == 0 || (5..=30).contains(&value)
        }
        Category::FullHouse => value == 0 || value == 25,
        Category::SmallStraight => value == 0 || value == 30,
        Category::LargeStraight => value == 0 || value == 40,
        Category::Yahtzee => value == 0 || value == 50,
    }
}

impl Scorecard {
    pub fn new() -> Scorecard {
        Scorecard::default()
    }

    /// Records a value directly. Intended for building test positions and
    /// sampled contexts; play goes through [`apply_action`].
    pub fn set(&mut self, cat: Category, value: u8) -> Result<(), GameError> {
        if !attainable(cat, value) {
            return Err(GameError::InvalidEntry { category: cat, value });
        }
        self.entries[cat.index()] = Some(value);
        if cat == Category::Yahtzee && value != 50 {
            self.yahtzee_bonus_count = 0;
        }
        Ok(())
    }

    pub fn with(mut self, cat: Category, value: u8) -> Result<Scorecard, GameError> {
        self.set(cat, value)?;
        Ok(self)
    }

    pub fn set_yahtzee_bonus_count(&mut self, n: u8) -> Result<(), GameError> {
        if n > 0 && self.get(Category::Yahtzee) != Some(50) {
            return Err(GameError::InvalidEntry {
                category: Category::Yahtzee,
                value: self.get(Category::Yahtzee).unwrap_or(0),
            });
        }
        self.yahtzee_bonus_count = n;
        Ok(())
    }

    #[inline]
    pub fn get(&self, cat: Category) -> Option<u8> {
        self.entries[cat.index()]
    }

    #[inline]
    pub fn is_used(&self, cat: Category) -> bool {
        self.entries[cat.index()].is_some()
    }

    #[inline]
    pub fn yahtzee_bonus_count(&self) -> u8 {
        self.yahtzee_bonus_count
    }

    /// Bit `i` set iff category `i` has an entry.
    pub fn used_mask(&self) -> u16 {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_some())
            .fold(0u16, |m, (i, _)| m | 1 << i)
    }

    pub fn filled(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_full(&self) -> bool {
        self.filled() == NUM_CATEGORIES
    }

    /// Sum of the recorded upper entries (uncapped).
    pub fn upper_total(&self) -> u32 {
        self.entries[..6].iter().flatten().map(|&v| v as u32).sum()
    }

    /// True when the Yahtzee box holds 50, so a further Yahtzee earns 100.
    pub fn yahtzee_bonus_eligible(&self) -> bool {
        self.get(Category::Yahtzee) == Some(50)
    }

    fn record(&mut self, cat: Category, points: u32, bonus: u32) {
        self.entries[cat.index()] = Some(points as u8);
        if bonus > 0 {
            self.yahtzee_bonus_count += 1;
        }
    }
}

pub fn upper_bonus(card: &Scorecard) -> u32 {
    if card.upper_total() >= UPPER_BONUS_THRESHOLD {
        UPPER_BONUS
    } else {
        0
    }
}

pub fn total_score(card: &Scorecard) -> u32 {
    let entries: u32 = card.entries.iter().flatten().map(|&v| v as u32).sum();
    entries + upper_bonus(card) + YAHTZEE_BONUS * card.yahtzee_bonus_count as u32
}

/// Whether joker scoring applies to these dice on this card.
#[inline]
pub fn joker_active(dice: &Dice, card: &Scorecard) -> bool {
    dice.is_yahtzee() && card.is_used(Category::Yahtzee)
}

/// Category bitmask of the boxes that may be scored with `dice` on `card`.
///
/// Without a joker this is every open box. With a joker the choice is forced
/// to the matching upper box if open, else the open lower boxes, else the open
/// upper boxes.
pub fn scorable_mask(dice: &Dice, card: &Scorecard) -> u16 {
    let joker_face = joker_active(dice, card).then(|| dice.faces()[0]);
    scorable_for(card.used_mask(), joker_face)
}

/// Scorable categories given the used-category mask and, when a joker is
/// active, the face of the Yahtzee.
pub(crate) fn scorable_for(used: u16, joker_face: Option<u8>) -> u16 {
    let open = !used & 0x1fff;
    let Some(face) = joker_face else {
        return open;
    };
    let matching = 1u16 << (face - 1);
    if open & matching != 0 {
        return matching;
    }
    let lower = open & 0x1fc0;
    if lower != 0 {
        return lower;
    }
    open & 0x003f
}

/// Box value with joker values substituted for the fixed-score categories.
pub(crate) fn joker_points(counts: &FaceCounts, sum: u32, cat: Category, joker: bool) -> u32 {
    match (joker, cat) {
        (true, Category::FullHouse) => 25,
        (true, Category::SmallStraight) => 30,
        (true, Category::LargeStraight) => 40,
        _ => score_from_counts(counts, sum, cat),
    }
}

/// Points and Yahtzee bonus for scoring `dice` in `cat`, applying joker rules.
pub fn joker_resolution(dice: &Dice, cat: Category, card: &Scorecard) -> Result<(u32, u32), GameError> {
    let illegal = |reason| GameError::IllegalMove {
        action: Action::Score(cat).to_string(),
        rolls_used: 2,
        reason,
    };
    if card.is_used(cat) {
        return Err(illegal("category already used"));
    }
    if !joker_active(dice, card) {
        return Ok((category_score(dice, cat), 0));
    }
    if scorable_mask(dice, card) & (1 << cat.index()) == 0 {
        return Err(illegal("joker rule forces a different category"));
    }
    let bonus = if card.yahtzee_bonus_eligible() { YAHTZEE_BONUS } else { 0 };
    let points = joker_points(&face_counts(dice), dice.sum(), cat, true);
    Ok((points, bonus))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub dice: Dice,
    pub card: Scorecard,
    /// Rolls taken this turn beyond the first: 0, 1 or 2.
    pub rolls_used: u8,
}

impl GameState {
    pub fn new_game<R: Rng + ?Sized>(rng: &mut R) -> GameState {
        GameState::from_card(Scorecard::new(), rng)
    }

    /// Start of a turn with a freshly rolled hand.
    pub fn from_card<R: Rng + ?Sized>(card: Scorecard, rng: &mut R) -> GameState {
        GameState {
            dice: Dice::roll(rng),
            card,
            rolls_used: 0,
        }
    }

    /// Turn number in 1..=13 while the game is running.
    pub fn turn(&self) -> usize {
        self.card.filled() + 1
    }

    pub fn is_terminal(&self) -> bool {
        self.card.is_full()
    }

    pub fn score(&self) -> u32 {
        total_score(&self.card)
    }

    /// Bitmask of legal scoring categories at `rolls_used == 2`.
    pub fn score_mask(&self) -> u16 {
        scorable_mask(&self.dice, &self.card)
    }
}

pub fn legal_actions(state: &GameState) -> Vec<Action> {
    if state.is_terminal() {
        return Vec::new();
    }
    if state.rolls_used < 2 {
        (0..NUM_KEEP_MASKS as u8).map(|b| Action::Keep(KeepMask(b))).collect()
    } else {
        let mask = state.score_mask();
        Category::ALL
            .iter()
            .filter(|c| mask >> c.index() & 1 == 1)
            .map(|&c| Action::Score(c))
            .collect()
    }
}

pub fn is_legal(state: &GameState, action: Action) -> bool {
    if state.is_terminal() {
        return false;
    }
    match action {
        Action::Keep(_) => state.rolls_used < 2,
        Action::Score(c) => state.rolls_used == 2 && state.score_mask() >> c.index() & 1 == 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub next: GameState,
    /// Change in total score, bonuses included.
    pub reward: u32,
    /// Points written into the category box (zero for keeps).
    pub points: u32,
}

pub fn apply_action<R: Rng + ?Sized>(state: &GameState, action: Action, rng: &mut R) -> Result<Transition, GameError> {
    if state.is_terminal() {
        return Err(GameError::Terminal);
    }
    match action {
        Action::Keep(mask) => {
            if state.rolls_used >= 2 {
                return Err(GameError::IllegalMove {
                    action: action.to_string(),
                    rolls_used: state.rolls_used,
                    reason: "no re-rolls left",
                });
            }
            let next = GameState {
                dice: state.dice.reroll(mask, rng),
                card: state.card,
                rolls_used: state.rolls_used + 1,
            };
            Ok(Transition { next, reward: 0, points: 0 })
        }
        Action::Score(cat) => {
            if state.rolls_used != 2 {
                return Err(GameError::IllegalMove {
                    action: action.to_string(),
                    rolls_used: state.rolls_used,
                    reason: "scoring happens after the third roll",
                });
            }
            let (points, bonus) = joker_resolution(&state.dice, cat, &state.card)?;
            let before = total_score(&state.card);
            let mut card = state.card;
            card.record(cat, points, bonus);
            let reward = total_score(&card) - before;
            let next = if card.is_full() {
                GameState {
                    dice: state.dice,
                    card,
                    rolls_used: 0,
                }
            } else {
                GameState::from_card(card, rng)
            };
            Ok(Transition { next, reward, points })
        }
    }
}
