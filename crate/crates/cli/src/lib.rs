//! Command-line front end: DP solving, training, evaluation and analysis.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use yahtzee_core::config::{ConfigError, RunConfig};
use yahtzee_core::dp::{self, load_table, save_table, DpError, DpPolicy, ValueTable};
use yahtzee_core::eval::{simulate_policy, EvalError, EvalStats, StatsFile};
use yahtzee_core::features::FeatureConfig;
use yahtzee_core::game::{Scorecard, NUM_CATEGORIES};
use yahtzee_core::nn::checkpoint::{self, CheckpointError};
use yahtzee_core::rollout::{evaluate_network, RolloutError};
use yahtzee_core::train::{train, TrainError, TrainOptions};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "YAHTZEE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "yahtzee", version, about = "Solitaire Yahtzee: optimal solver and reinforcement-learning agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the game exactly and print the optimal expected score.
    SolveDp {
        /// Value-table cache: loaded when present, written otherwise.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Train an agent from a config file.
    Train(TrainArgs),
    /// Play seeded games with a checkpoint or the optimal policy and write statistics.
    Evaluate(EvaluateArgs),
    /// Derive per-turn and per-category tables from a statistics file.
    Analyze {
        stats: PathBuf,
        /// Directory for the derived CSV files (defaults to the stats file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; omitted keys take the defaults of the chosen algorithm.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total training games.
    #[arg(long)]
    pub games: Option<u64>,
    /// Output directory for metrics and checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop after this many games; rerun the same command to resume.
    #[arg(long)]
    pub stop_after: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, conflicts_with = "dp_policy", required_unless_present = "dp_policy")]
    pub checkpoint: Option<PathBuf>,
    /// Use the optimal policy instead of a checkpoint.
    #[arg(long)]
    pub dp_policy: bool,
    /// Value-table cache for `--dp-policy`.
    #[arg(long, requires = "dp_policy")]
    pub cache: Option<PathBuf>,
    /// Config whose feature settings must match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub games: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `stats.json` and `stats.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) | CliError::Mismatch(_) => EXIT_CONFIG,
            CliError::Train(TrainError::Config(_)) => EXIT_CONFIG,
            CliError::Train(TrainError::Resume(_)) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Configures the global thread pool from [`THREADS_ENV`].
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(CliError::Usage(format!("{THREADS_ENV} must be positive")));
    }
    // A pool set up earlier in the same process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Output goes to `out`, diagnostics to stderr.
pub fn run_with<I, T>(args: I, out: &mut String) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            out.push_str(&e.render().to_string());
            return code;
        }
    };
    match init_threads().and_then(|_| execute(cli.command, out)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command, out: &mut String) -> Result<(), CliError> {
    match cmd {
        Command::SolveDp { cache } => solve_dp(cache.as_deref(), out).map(|_| ()),
        Command::Train(a) => cmd_train(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out).map(|_| ()),
        Command::Analyze { stats, out: dir } => cmd_analyze(&stats, dir.as_deref(), out),
    }
}

/// Loads the value table from `cache` or solves it (and then writes the cache).
pub fn value_table(cache: Option<&Path>) -> Result<ValueTable, CliError> {
    match cache {
        Some(p) if p.exists() => Ok(load_table(p)?),
        Some(p) => {
            let t = dp::solve();
            save_table(&t, p)?;
            Ok(t)
        }
        None => Ok(dp::solve()),
    }
}

pub fn solve_dp(cache: Option<&Path>, out: &mut String) -> Result<f64, CliError> {
    let clock = Instant::now();
    let table = value_table(cache)?;
    let ev = table.start_value();
    writeln!(out, "optimal expected score: {ev:.4}").unwrap();
    writeln!(out, "elapsed: {:.1}s", clock.elapsed().as_secs_f64()).unwrap();
    Ok(ev)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

pub fn cmd_train(a: &TrainArgs, out: &mut String) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.games {
        cfg.train.games = g;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    let s = train(&cfg, &dir, TrainOptions { stop_after_games: a.stop_after, progress: !a.quiet })?;
    writeln!(
        out,
        "{} {} games in {} updates -> {}",
        if s.finished { "finished" } else { "paused after" },
        s.games,
        s.updates,
        dir.display()
    )
    .unwrap();
    if let Some(e) = s.evals.last() {
        writeln!(
            out,
            "last eval at {} games: mean={:.2} median={:.1} bonus={:.2}% yahtzee={:.2}% >=250={:.2}%",
            e.games,
            e.mean,
            e.median,
            e.bonus_rate,
            e.yahtzee_rate,
            100.0 * e.p250
        )
        .unwrap();
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs, out: &mut String) -> Result<StatsFile, CliError> {
    if a.games == 0 {
        return Err(CliError::Usage("--games must be at least 1".into()));
    }
    let (records, policy, config) = if a.dp_policy {
        let table = value_table(a.cache.as_deref())?;
        let records = simulate_policy(|_| DpPolicy::new(&table), a.games, a.seed)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        (records, "dp-optimal".to_string(), json!({"policy": "dp-optimal"}))
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires a checkpoint");
        let c = checkpoint::load(path)?;
        if let Some(cp) = &a.config {
            let cfg = RunConfig::load(cp)?;
            check_features(&cfg.features, &c.features)?;
        }
        let records = evaluate_network(&c.net, &c.features, a.games, a.seed)?;
        let config = json!({
            "checkpoint": path.display().to_string(),
            "net": c.net.config(),
            "features": c.features,
            "run": c.state.get("config").cloned().unwrap_or_default(),
        });
        (records, "network".to_string(), config)
    };
    let stats = EvalStats::from_records(&records)?;
    let file = StatsFile::new(a.seed, policy, config, stats);
    fs::create_dir_all(&a.out)?;
    file.write_json(&a.out.join("stats.json"))?;
    file.write_csv(&a.out.join("stats.csv"))?;
    writeln!(out, "{}", file.stats.summary()).unwrap();
    Ok(file)
}

fn check_features(flags: &FeatureConfig, ckpt: &FeatureConfig) -> Result<(), CliError> {
    if flags != ckpt {
        return Err(CliError::Mismatch(format!(
            "feature config {flags:?} does not match the checkpoint's {ckpt:?}"
        )));
    }
    Ok(())
}

/// Per-turn top-3 table as text.
pub fn turn_table(stats: &EvalStats) -> String {
    let mut s = String::new();
    writeln!(s, "{:>4}  {:<16} {:>7} {:>6}", "turn", "category", "usage%", "median").unwrap();
    for t in &stats.turns {
        for (i, u) in t.top3.iter().enumerate() {
            let turn = if i == 0 { t.turn.to_string() } else { String::new() };
            writeln!(s, "{turn:>4}  {:<16} {:>7.2} {:>6.1}", u.category, u.usage_pct, u.median_score).unwrap();
        }
    }
    s
}

pub fn cmd_analyze(path: &Path, dir: Option<&Path>, out: &mut String) -> Result<(), CliError> {
    let file = StatsFile::read_json(path)?;
    let s = &file.stats;
    if s.turns.len() != NUM_CATEGORIES || s.categories.len() != NUM_CATEGORIES {
        return Err(CliError::Runtime(format!(
            "{} has {} turn sections and {} categories, expected {NUM_CATEGORIES} of each",
            path.display(),
            s.turns.len(),
            s.categories.len()
        )));
    }
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;

    let mut w = csv::Writer::from_path(dir.join("turns.csv")).map_err(EvalError::from)?;
    w.write_record(["turn", "rank", "category", "usage_pct", "median_score"]).map_err(EvalError::from)?;
    for t in &s.turns {
        for (i, u) in t.top3.iter().enumerate() {
            w.write_record([
                t.turn.to_string(),
                (i + 1).to_string(),
                u.category.clone(),
                u.usage_pct.to_string(),
                u.median_score.to_string(),
            ])
            .map_err(EvalError::from)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("categories.csv")).map_err(EvalError::from)?;
    w.write_record(["category", "mean", "median"]).map_err(EvalError::from)?;
    for c in &s.categories {
        w.write_record([c.category.clone(), c.mean.to_string(), c.median.to_string()]).map_err(EvalError::from)?;
    }
    w.flush()?;

    writeln!(out, "policy: {} (seed {})", file.policy, file.seed).unwrap();
    writeln!(out, "{}", s.summary()).unwrap();
    out.push_str(&turn_table(s));
    let (per_turn, single) = reference_numbers();
    writeln!(out, "optimal full-game mean per turn: {per_turn:.2}").unwrap();
    writeln!(out, "optimal single-turn expectation from an empty card: {single:.2}").unwrap();
    writeln!(out, "wrote {} and {}", dir.join("turns.csv").display(), dir.join("categories.csv").display()).unwrap();
    Ok(())
}

/// Optimal full-game score spread over 13 turns, and the best single turn
/// from an empty card.
pub fn reference_numbers() -> (f64, f64) {
    (OPTIMAL_SCORE / NUM_CATEGORIES as f64, dp::single_turn_optimum(&Scorecard::new()))
}

/// Optimal expected final score, rounded to two decimals.
pub const OPTIMAL_SCORE: f64 = 254.59;
