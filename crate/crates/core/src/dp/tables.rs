//! Dice multiset enumeration and re-roll probabilities.
//!
//! The 252 five-dice multisets are the roll outcomes; the 462 multisets of
//! size 0..=5 are the possible kept subsets. Both are indexed densely and the
//! kept-to-result transition matrix is stored sparsely by row.

use std::sync::OnceLock;

use crate::game::{face_counts, score_from_counts, Category, Dice, FaceCounts, NUM_CATEGORIES, NUM_KEEP_MASKS};

pub const NUM_ROLLS: usize = 252;
pub const NUM_KEEPS: usize = 462;

/// Everything the widget evaluation needs about dice, computed once.
pub struct DiceTables {
    pub rolls: Vec<Dice>,
    pub roll_counts: Vec<FaceCounts>,
    pub keeps: Vec<FaceCounts>,
    /// `keep_of[roll * 32 + mask]`: kept multiset for a keep mask on a roll.
    pub keep_of: Vec<u16>,
    /// Distinct kept multisets per roll, each with the smallest mask producing it.
    pub choices: Vec<Vec<(u16, u8)>>,
    /// Row `k` spans `row_start[k]..row_start[k + 1]` of `targets`/`probs`.
    pub row_start: Vec<usize>,
    pub targets: Vec<u16>,
    pub probs: Vec<f64>,
    /// Raw category values, `scores[roll * 13 + cat]`.
    pub scores: Vec<u8>,
    roll_lookup: Vec<u16>,
    keep_lookup: Vec<u16>,
}

fn counts_code(c: &FaceCounts) -> usize {
    c.0.iter().rev().fold(0, |acc, &n| acc * 6 + n as usize)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Multinomial probability that rolling `5 - |kept|` fresh dice turns `kept`
/// into `result`; zero when `kept` is not a sub-multiset of `result`.
pub fn keep_transition_prob(kept: &FaceCounts, result: &FaceCounts) -> f64 {
    let mut rolled = 0u32;
    let mut denom = 1.0;
    for v in 0..6 {
        if kept.0[v] > result.0[v] {
            return 0.0;
        }
        let extra = (result.0[v] - kept.0[v]) as u32;
        rolled += extra;
        denom *= factorial(extra);
    }
    if rolled as u8 + kept.total() != 5 || result.total() != 5 {
        return 0.0;
    }
    factorial(rolled) / denom / 6f64.powi(rolled as i32)
}

fn enumerate_counts(total: u8, face: usize, current: &mut [u8; 6], out: &mut Vec<FaceCounts>) {
    if face == 5 {
        current[5] = total;
        out.push(FaceCounts(*current));
        return;
    }
    for n in (0..=total).rev() {
        current[face] = n;
        enumerate_counts(total - n, face + 1, current, out);
    }
    current[face] = 0;
}

fn counts_to_dice(c: &FaceCounts) -> Dice {
    let mut faces = [0u8; 5];
    let mut i = 0;
    for v in 0..6 {
        for _ in 0..c.0[v] {
            faces[i] = v as u8 + 1;
            i += 1;
        }
    }
    Dice::new(faces).expect("counts describe five valid dice")
}

impl DiceTables {
    fn build() -> DiceTables {
        let mut roll_counts = Vec::with_capacity(NUM_ROLLS);
        enumerate_counts(5, 0, &mut [0; 6], &mut roll_counts);
        roll_counts.sort_by_key(|c| counts_to_dice(c));
        let rolls: Vec<Dice> = roll_counts.iter().map(counts_to_dice).collect();

        let mut keeps = Vec::with_capacity(NUM_KEEPS);
        for size in 0..=5 {
            let mut layer = Vec::new();
            enumerate_counts(size, 0, &mut [0; 6], &mut layer);
            layer.sort_by_key(|c| std::cmp::Reverse(c.0));
            keeps.extend(layer);
        }

        let mut roll_lookup = vec![u16::MAX; 46656];
        for (i, c) in roll_counts.iter().enumerate() {
            roll_lookup[counts_code(c)] = i as u16;
        }
        let mut keep_lookup = vec![u16::MAX; 46656];
        for (i, c) in keeps.iter().enumerate() {
            keep_lookup[counts_code(c)] = i as u16;
        }

        let mut keep_of = vec![0u16; NUM_ROLLS * NUM_KEEP_MASKS];
        let mut choices = Vec::with_capacity(NUM_ROLLS);
        for (r, dice) in rolls.iter().enumerate() {
            let faces = dice.faces();
            let mut seen: Vec<(u16, u8)> = Vec::new();
            for mask in 0..NUM_KEEP_MASKS as u8 {
                let mut kc = [0u8; 6];
                for (i, &f) in faces.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        kc[f as usize - 1] += 1;
                    }
                }
                let k = keep_lookup[counts_code(&FaceCounts(kc))];
                keep_of[r * NUM_KEEP_MASKS + mask as usize] = k;
                if !seen.iter().any(|&(s, _)| s == k) {
                    seen.push((k, mask));
                }
            }
            choices.push(seen);
        }

        let mut row_start = vec![0usize];
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        for kept in &keeps {
            for (r, rc) in roll_counts.iter().enumerate() {
                let p = keep_transition_prob(kept, rc);
                if p > 0.0 {
                    targets.push(r as u16);
                    probs.push(p);
                }
            }
            row_start.push(targets.len());
        }

        let mut scores = vec![0u8; NUM_ROLLS * NUM_CATEGORIES];
        for (r, dice) in rolls.iter().enumerate() {
            for cat in Category::ALL {
                scores[r * NUM_CATEGORIES + cat.index()] = score_from_counts(&roll_counts[r], dice.sum(), cat) as u8;
            }
        }

        DiceTables {
            rolls,
            roll_counts,
            keeps,
            keep_of,
            choices,
            row_start,
            targets,
            probs,
            scores,
            roll_lookup,
            keep_lookup,
        }
    }

    pub fn get() -> &'static DiceTables {
        static TABLES: OnceLock<DiceTables> = OnceLock::new();
        TABLES.get_or_init(DiceTables::build)
    }

    pub fn roll_index(&self, dice: &Dice) -> usize {
        self.roll_lookup[counts_code(&face_counts(dice))] as usize
    }

    pub fn keep_index(&self, kept: &FaceCounts) -> Option<usize> {
        if kept.total() > 5 || kept.0.iter().any(|&n| n > 5) {
            return None;
        }
        match self.keep_lookup[counts_code(kept)] {
            u16::MAX => None,
            k => Some(k as usize),
        }
    }

    /// Index of the empty keep, whose row is the distribution of a fresh roll.
    pub fn empty_keep(&self) -> usize {
        0
    }

    #[inline]
    pub fn row(&self, keep: usize) -> (&[u16], &[f64]) {
        let span = self.row_start[keep]..self.row_start[keep + 1];
        (&self.targets[span.clone()], &self.probs[span])
    }

    #[inline]
    pub fn score(&self, roll: usize, cat: Category) -> u32 {
        self.scores[roll * NUM_CATEGORIES + cat.index()] as u32
    }
}
