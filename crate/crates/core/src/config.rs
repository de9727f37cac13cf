//! Run configuration.
//!
//! Files are TOML; every setting is addressed by a dotted key such as
//! `algo.gae_lambda` (a `[algo]` table with `gae_lambda = 0.3` is the same
//! key). Keys absent from the file keep their defaults, and the defaults of
//! the `algo` section depend on `algo.algorithm`. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::algo::{AlgoConfig, Algorithm};
use crate::features::FeatureConfig;
use crate::nn::NetConfig;
use crate::rollout::{Task, TaskConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` expects {expected}, got {found}")]
    Type { key: String, expected: &'static str, found: String },
    #[error("invalid value in `{section}`: {message}")]
    Value { section: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleTurnConfig {
    pub empty_card_only: bool,
}

/// Training-loop settings. Counts are in games.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub games: u64,
    /// Length the learning-rate, entropy and γ schedules are laid out over.
    /// Defaults to `games`; a larger value trains the opening stretch of a
    /// longer run.
    pub schedule_games: Option<u64>,
    pub batch_games: u64,
    pub eval_every: u64,
    pub eval_games: u64,
    pub eval_seed: u64,
    pub checkpoint_every: u64,
    /// Updates between policy-KL measurements; zero disables them.
    pub kl_every: u64,
    pub probe_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            games: 25_000,
            schedule_games: None,
            batch_games: 20,
            eval_every: 2_500,
            eval_games: 1_000,
            eval_seed: 1_000_003,
            checkpoint_every: 2_500,
            kl_every: 10,
            probe_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub single_turn: SingleTurnConfig,
    pub features: FeatureConfig,
    pub net: NetConfig,
    pub algo: AlgoConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_algorithm(Algorithm::A2c)
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_f64() => "a number",
        Value::Number(_) => "an integer",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "a table",
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) {
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(p) = parts.next() {
        let obj = cur.as_object_mut().expect("defaults are nested tables");
        if parts.peek().is_none() {
            obj.insert(p.to_string(), v);
            return;
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Whether a user value may replace a default of the given shape.
fn compatible(default: &Value, user: &Value) -> bool {
    match (default, user) {
        (Value::Number(d), Value::Number(u)) => d.is_f64() || !u.is_f64(),
        (Value::Bool(_), Value::Bool(_)) | (Value::String(_), Value::String(_)) => true,
        (Value::Null, Value::Number(_) | Value::String(_)) => true,
        _ => false,
    }
}

fn expected_kind(default: &Value) -> &'static str {
    match default {
        Value::Null => "a number or string",
        v => json_kind(v),
    }
}

impl RunConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> RunConfig {
        RunConfig {
            seed: 0,
            task: Task::FullGame,
            single_turn: SingleTurnConfig { empty_card_only: false },
            features: FeatureConfig::default(),
            net: NetConfig::default(),
            algo: AlgoConfig::defaults(algorithm),
            train: TrainConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }

    pub fn task_config(&self) -> TaskConfig {
        TaskConfig { task: self.task, empty_card_only: self.single_turn.empty_card_only }
    }

    /// Parses TOML text over the defaults.
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let table: toml::Table = toml::from_str(text)?;
        let user = serde_json::to_value(table).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut keys = BTreeMap::new();
        flatten("", &user, &mut keys);

        let algorithm = match keys.get("algo.algorithm") {
            None => Algorithm::A2c,
            Some(v) => serde_json::from_value(v.clone()).map_err(|_| ConfigError::Value {
                section: "algo.algorithm".into(),
                message: format!("unknown algorithm {v}; expected one of reinforce, a2c, ppo"),
            })?,
        };
        let mut merged = serde_json::to_value(RunConfig::for_algorithm(algorithm)).expect("defaults serialise");
        let mut defaults = BTreeMap::new();
        flatten("", &merged, &mut defaults);

        for (key, value) in keys {
            let Some(default) = defaults.get(&key) else {
                return Err(ConfigError::UnknownKey(key));
            };
            if !compatible(default, &value) {
                return Err(ConfigError::Type { expected: expected_kind(default), found: json_kind(&value).to_string(), key });
            }
            set_path(&mut merged, &key, value);
        }
        let Value::Object(sections) = &merged else { unreachable!() };
        for (name, v) in sections {
            let check = match name.as_str() {
                "task" => serde_json::from_value::<Task>(v.clone()).map(drop),
                "features" => serde_json::from_value::<FeatureConfig>(v.clone()).map(drop),
                "net" => serde_json::from_value::<NetConfig>(v.clone()).map(drop),
                "algo" => serde_json::from_value::<AlgoConfig>(v.clone()).map(drop),
                _ => Ok(()),
            };
            check.map_err(|e| ConfigError::Value { section: name.clone(), message: e.to_string() })?;
        }
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        RunConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.net.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.algo.validate().map_err(ConfigError::Invalid)?;
        let t = &self.train;
        if t.batch_games == 0 {
            return Err(ConfigError::Invalid("train.batch_games must be positive".into()));
        }
        if t.games == 0 {
            return Err(ConfigError::Invalid("train.games must be positive".into()));
        }
        if t.schedule_games.is_some_and(|s| s < t.games) {
            return Err(ConfigError::Invalid("train.schedule_games must be at least train.games".into()));
        }
        if self.algo.algorithm == Algorithm::Ppo && self.algo.ppo_games_per_minibatch > t.batch_games as usize {
            return Err(ConfigError::Invalid("algo.ppo_games_per_minibatch exceeds train.batch_games".into()));
        }
        Ok(())
    }

    /// Dotted keys and values, as accepted by [`RunConfig::from_toml_str`].
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }
}
