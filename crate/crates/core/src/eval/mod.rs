//! Game simulation and aggregate score statistics.
//!
//! Games are identified by a global index; game `g` under master seed `s`
//! always draws its dice from the same stream, so any two policies evaluated
//! with the same seed see identical opening rolls and the results do not
//! depend on how games are spread across threads.

pub mod diagnostics;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    apply_action, total_score, upper_bonus, Action, Category, GameError, GameState, Scorecard,
    NUM_CATEGORIES, STEPS_PER_GAME,
};
use crate::policy::Policy;
use crate::rng::{stream, Domain};

/// Version tag written into every stats file.
pub const STATS_SCHEMA_VERSION: u32 = 1;

/// Score thresholds reported as `P(score >= n)`.
pub const SCORE_THRESHOLDS: [u32; 10] = [50, 100, 150, 200, 250, 300, 400, 500, 750, 1000];

/// Games handed to one policy instance by [`simulate_policy`].
pub const SIM_CHUNK: u64 = 250;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no games to evaluate")]
    Empty,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("stats schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
}

/// Outcome of one finished game.
#[derive(Clone, Debug, PartialEq)]
pub struct GameRecord {
    pub card: Scorecard,
    /// Category scored on each turn, in turn order.
    pub order: [Category; NUM_CATEGORIES],
}

impl GameRecord {
    pub fn score(&self) -> u32 {
        total_score(&self.card)
    }
}

/// Plays games `games` to completion in lockstep under `policy`.
pub fn play_games<P: Policy + ?Sized>(
    policy: &mut P,
    seed: u64,
    games: std::ops::Range<u64>,
) -> Result<Vec<GameRecord>, GameError> {
    let mut rngs: Vec<_> = games.map(|g| stream(seed, Domain::Dice, g)).collect();
    let mut states: Vec<GameState> = rngs.iter_mut().map(|r| GameState::new_game(r)).collect();
    let mut orders = vec![[Category::Chance; NUM_CATEGORIES]; states.len()];
    for _ in 0..STEPS_PER_GAME {
        let actions = policy.act_batch(&states);
        for (i, action) in actions.into_iter().enumerate() {
            if let Action::Score(c) = action {
                orders[i][states[i].card.filled()] = c;
            }
            states[i] = apply_action(&states[i], action, &mut rngs[i])?.next;
        }
    }
    Ok(states
        .into_iter()
        .zip(orders)
        .map(|(s, order)| GameRecord { card: s.card, order })
        .collect())
}

/// Plays `n_games` games, building one policy per chunk of [`SIM_CHUNK`]
/// games from `make(chunk_index)`. Records come back in game order.
pub fn simulate_policy<P, F>(make: F, n_games: u64, seed: u64) -> Result<Vec<GameRecord>, GameError>
where
    P: Policy,
    F: Fn(u64) -> P + Sync,
{
    let chunks: Vec<u64> = (0..n_games.div_ceil(SIM_CHUNK)).collect();
    let parts: Vec<Result<Vec<GameRecord>, GameError>> = chunks
        .par_iter()
        .map(|&c| {
            let start = c * SIM_CHUNK;
            let end = (start + SIM_CHUNK).min(n_games);
            play_games(&mut make(c), seed, start..end)
        })
        .collect();
    let mut out = Vec::with_capacity(n_games as usize);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub n: u32,
    /// Fraction of games scoring at least `n`.
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    pub mean: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryUsage {
    pub category: String,
    /// Percentage of games that scored this category on the turn.
    pub usage_pct: f64,
    /// Median points written when it was.
    pub median_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnStats {
    pub turn: usize,
    /// Games that scored each category on this turn, by category index.
    pub counts: Vec<u64>,
    /// The three most used categories, most used first.
    pub top3: Vec<CategoryUsage>,
}

/// Aggregate statistics over a set of finished games.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub games: usize,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    /// Population variance of the final scores.
    pub variance: f64,
    /// Percentage of games with an upper total of at least 63.
    pub bonus_rate: f64,
    /// Percentage of games with 50 in the Yahtzee box.
    pub yahtzee_rate: f64,
    /// Mean number of 100-point extra Yahtzee bonuses per game.
    pub yahtzee_bonus_mean: f64,
    pub p_at_least: Vec<Threshold>,
    pub categories: Vec<CategoryStats>,
    pub turns: Vec<TurnStats>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl EvalStats {
    pub fn from_records(records: &[GameRecord]) -> Result<EvalStats, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = records.len() as f64;
        let mut scores: Vec<f64> = records.iter().map(|r| r.score() as f64).collect();
        let mean = scores.iter().sum::<f64>() / n;
        let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let pct = |pred: &dyn Fn(&GameRecord) -> bool| 100.0 * records.iter().filter(|r| pred(r)).count() as f64 / n;
        let bonus_rate = pct(&|r| upper_bonus(&r.card) > 0);
        let yahtzee_rate = pct(&|r| r.card.get(Category::Yahtzee) == Some(50));
        let yahtzee_bonus_mean =
            records.iter().map(|r| r.card.yahtzee_bonus_count() as f64).sum::<f64>() / n;
        let p_at_least = SCORE_THRESHOLDS
            .iter()
            .map(|&t| Threshold {
                n: t,
                p: scores.iter().filter(|&&s| s >= t as f64).count() as f64 / n,
            })
            .collect();

        let categories = Category::ALL
            .iter()
            .map(|&c| {
                let mut v: Vec<f64> = records.iter().map(|r| r.card.get(c).unwrap_or(0) as f64).collect();
                CategoryStats {
                    category: c.name().to_string(),
                    mean: v.iter().sum::<f64>() / n,
                    median: median(&mut v),
                }
            })
            .collect();

        let turns = (0..NUM_CATEGORIES)
            .map(|t| {
                let mut counts = vec![0u64; NUM_CATEGORIES];
                for r in records {
                    counts[r.order[t].index()] += 1;
                }
                let mut ranked: Vec<usize> = (0..NUM_CATEGORIES).filter(|&c| counts[c] > 0).collect();
                ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
                let top3 = ranked
                    .into_iter()
                    .take(3)
                    .map(|c| {
                        let cat = Category::from_index(c).unwrap();
                        let mut pts: Vec<f64> = records
                            .iter()
                            .filter(|r| r.order[t] == cat)
                            .map(|r| r.card.get(cat).unwrap_or(0) as f64)
                            .collect();
                        CategoryUsage {
                            category: cat.name().to_string(),
                            usage_pct: 100.0 * counts[c] as f64 / n,
                            median_score: median(&mut pts),
                        }
                    })
                    .collect();
                TurnStats { turn: t + 1, counts, top3 }
            })
            .collect();

        Ok(EvalStats {
            games: records.len(),
            mean,
            median: median(&mut scores),
            std_dev: variance.sqrt(),
            variance,
            bonus_rate,
            yahtzee_rate,
            yahtzee_bonus_mean,
            p_at_least,
            categories,
            turns,
        })
    }

    /// `P(score >= n)` for one of the [`SCORE_THRESHOLDS`].
    pub fn p_at_least(&self, n: u32) -> Option<f64> {
        self.p_at_least.iter().find(|t| t.n == n).map(|t| t.p)
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "games={} mean={:.2} median={:.1} bonus={:.2}% yahtzee={:.2}% >=250={:.2}%",
            self.games,
            self.mean,
            self.median,
            self.bonus_rate,
            self.yahtzee_rate,
            100.0 * self.p_at_least(250).unwrap_or(0.0)
        )
    }
}

/// Stats file contents: the statistics plus provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsFile {
    pub schema_version: u32,
    pub seed: u64,
    pub policy: String,
    pub config: serde_json::Value,
    pub stats: EvalStats,
}

impl StatsFile {
    pub fn new(seed: u64, policy: impl Into<String>, config: serde_json::Value, stats: EvalStats) -> StatsFile {
        StatsFile {
            schema_version: STATS_SCHEMA_VERSION,
            seed,
            policy: policy.into(),
            config,
            stats,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<StatsFile, EvalError> {
        let text = std::fs::read_to_string(path)?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != STATS_SCHEMA_VERSION {
            return Err(EvalError::Schema { found, expected: STATS_SCHEMA_VERSION });
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Flat `section,key,value` table of the headline numbers.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["section", "key", "value"])?;
        let s = &self.stats;
        w.write_record(["meta", "schema_version", &self.schema_version.to_string()])?;
        w.write_record(["meta", "seed", &self.seed.to_string()])?;
        w.write_record(["meta", "policy", &self.policy])?;
        w.write_record(["meta", "config", &self.config.to_string()])?;
        for (k, v) in [
            ("games", s.games as f64),
            ("mean", s.mean),
            ("median", s.median),
            ("std_dev", s.std_dev),
            ("variance", s.variance),
            ("bonus_rate", s.bonus_rate),
            ("yahtzee_rate", s.yahtzee_rate),
            ("yahtzee_bonus_mean", s.yahtzee_bonus_mean),
        ] {
            w.write_record(["summary", k, &v.to_string()])?;
        }
        for t in &s.p_at_least {
            w.write_record(["p_at_least", &t.n.to_string(), &t.p.to_string()])?;
        }
        for c in &s.categories {
            w.write_record(["category_mean", &c.category, &c.mean.to_string()])?;
            w.write_record(["category_median", &c.category, &c.median.to_string()])?;
        }
        for t in &s.turns {
            for (rank, u) in t.top3.iter().enumerate() {
                let key = format!("{}:{}:{}", t.turn, rank + 1, u.category);
                w.write_record(["turn_usage_pct", &key, &u.usage_pct.to_string()])?;
                w.write_record(["turn_median_score", &key, &u.median_score.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
