//! Training loop: self-play batches, optimizer steps, periodic evaluation,
//! checkpoints and a JSON-lines metrics log.
//!
//! Every random draw is keyed by the run seed and a counter (game index or
//! update index), so a run resumed from a checkpoint writes exactly the
//! same metrics as one that was never interrupted. Metrics never contain
//! wall-clock time.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::algo::{
    a2c_loss, entropy_coefficients, gamma_at, ppo_advantages, ppo_loss, reinforce_loss, Algorithm, Batch,
    LossOutput, LossParts, StepCoefficients, Trajectory,
};
use crate::config::{ConfigError, RunConfig};
use crate::eval::diagnostics::{explained_variance, mask_diversity, top_k_frequency};
use crate::eval::{EvalError, EvalStats};
use crate::features::feature_length;
use crate::game::Action;
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::optim::{clip_gradients, lr_at, Adam, AdamConfig};
use crate::nn::{Network, NnError};
use crate::rng::{stream, Domain};
use crate::rollout::{collect_batch, evaluate_network, evaluate_single_turn, policy_kl, ProbeSet, RolloutError, Task, PROBE_STATES};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training aborted at update {update}: non-finite {what}")]
    NonFinite { update: u64, what: String },
    #[error("cannot resume: {0}")]
    Resume(String),
}

/// Counters saved with each checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunState {
    games_done: u64,
    updates_done: u64,
    /// Metrics file length when the checkpoint was taken.
    metrics_len: u64,
    config: Value,
}

/// Config as echoed into run artifacts. The output directory is left out so
/// that identical runs in different places write identical files.
pub fn config_echo(cfg: &RunConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("out_dir");
    }
    v
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Stop (with a checkpoint) once this many games have been played.
    pub stop_after_games: Option<u64>,
    /// Print progress lines to stderr.
    pub progress: bool,
}

/// Evaluation snapshot written to the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub games: u64,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub bonus_rate: f64,
    pub yahtzee_rate: f64,
    pub p250: f64,
    pub single_turn_mean: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub games: u64,
    pub updates: u64,
    pub finished: bool,
    pub evals: Vec<EvalRecord>,
    pub out_dir: PathBuf,
}

pub struct Trainer {
    cfg: RunConfig,
    out_dir: PathBuf,
    net: Network,
    adam: Adam,
    games_done: u64,
    updates_done: u64,
    probe: Option<ProbeSet>,
    metrics: BufWriter<File>,
    evals: Vec<EvalRecord>,
}

#[derive(Default)]
struct StepStats {
    parts: LossParts,
    steps: usize,
    grad_norm: f64,
    clipped: usize,
    roll_entropy: (f64, usize),
    score_entropy: (f64, usize),
}

impl StepStats {
    fn add(&mut self, loss: &LossOutput, outputs: &crate::nn::Outputs, actions: &[Action], norm: f64, clipped: bool) {
        let p = &loss.parts;
        self.parts.policy += p.policy;
        self.parts.value += p.value;
        self.parts.entropy += p.entropy;
        self.parts.upper += p.upper;
        self.parts.total += p.total;
        self.steps += 1;
        self.grad_norm += norm;
        self.clipped += clipped as usize;
        for (row, a) in actions.iter().enumerate() {
            match a {
                Action::Keep(_) => {
                    self.roll_entropy.0 += outputs.roll_entropy(row);
                    self.roll_entropy.1 += 1;
                }
                Action::Score(_) => {
                    self.score_entropy.0 += outputs.score_entropy(row);
                    self.score_entropy.1 += 1;
                }
            }
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    mean(&xs.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()).sqrt()
}

impl Trainer {
    /// Starts a run in `out_dir`, or resumes it from its latest checkpoint.
    pub fn open(cfg: &RunConfig, out_dir: &Path) -> Result<Trainer, TrainError> {
        cfg.validate()?;
        fs::create_dir_all(out_dir)?;
        let ckpt = out_dir.join(LATEST_CHECKPOINT);
        let metrics_path = out_dir.join(METRICS_FILE);
        let input = feature_length(&cfg.features);
        let probe = (cfg.train.kl_every > 0)
            .then(|| ProbeSet::new(&cfg.features, cfg.train.probe_seed, PROBE_STATES))
            .transpose()?;
        if ckpt.exists() {
            let c = checkpoint::load(&ckpt)?;
            let state: RunState = serde_json::from_value(c.state)?;
            if state.config != config_echo(cfg) {
                return Err(TrainError::Resume(format!(
                    "{} was written by a different configuration",
                    ckpt.display()
                )));
            }
            let f = OpenOptions::new().write(true).open(&metrics_path)?;
            f.set_len(state.metrics_len)?;
            drop(f);
            let metrics = BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?);
            let evals = read_evals(&metrics_path)?;
            return Ok(Trainer {
                cfg: cfg.clone(),
                out_dir: out_dir.to_path_buf(),
                net: c.net,
                adam: c.adam,
                games_done: state.games_done,
                updates_done: state.updates_done,
                probe,
                metrics,
                evals,
            });
        }
        let net = Network::new(cfg.net, input, cfg.seed)?;
        let adam = Adam::new(net.num_params(), AdamConfig::default());
        let mut metrics = BufWriter::new(File::create(&metrics_path)?);
        let header = json!({
            "event": "header",
            "schema_version": METRICS_SCHEMA_VERSION,
            "config": config_echo(cfg),
            "num_params": net.num_params(),
        });
        writeln!(metrics, "{header}")?;
        Ok(Trainer {
            cfg: cfg.clone(),
            out_dir: out_dir.to_path_buf(),
            net,
            adam,
            games_done: 0,
            updates_done: 0,
            probe,
            metrics,
            evals: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn games_done(&self) -> u64 {
        self.games_done
    }

    /// Update count the schedules are laid out over.
    fn schedule_updates(&self) -> u64 {
        let t = &self.cfg.train;
        t.schedule_games.unwrap_or(t.games).div_ceil(t.batch_games)
    }

    fn write(&mut self, v: &Value) -> Result<(), TrainError> {
        writeln!(self.metrics, "{v}")?;
        self.metrics.flush()?;
        Ok(())
    }

    fn save(&mut self, name: &str) -> Result<(), TrainError> {
        self.metrics.flush()?;
        let metrics_len = fs::metadata(self.out_dir.join(METRICS_FILE))?.len();
        let state = RunState {
            games_done: self.games_done,
            updates_done: self.updates_done,
            metrics_len,
            config: config_echo(&self.cfg),
        };
        checkpoint::save(
            &self.out_dir.join(name),
            &self.net,
            &self.cfg.features,
            &self.adam,
            &serde_json::to_value(state)?,
        )?;
        Ok(())
    }

    /// Argmax evaluation on the configured evaluation games.
    pub fn evaluate(&self) -> Result<EvalRecord, TrainError> {
        let t = &self.cfg.train;
        let records = evaluate_network(&self.net, &self.cfg.features, t.eval_games, t.eval_seed)?;
        let stats = EvalStats::from_records(&records)?;
        let single_turn_mean = match self.cfg.task {
            Task::SingleTurn => Some(evaluate_single_turn(
                &self.net,
                &self.cfg.features,
                self.cfg.single_turn.empty_card_only,
                t.eval_games,
                t.eval_seed,
            )?),
            Task::FullGame => None,
        };
        Ok(EvalRecord {
            games: self.games_done,
            mean: stats.mean,
            median: stats.median,
            std_dev: stats.std_dev,
            bonus_rate: stats.bonus_rate,
            yahtzee_rate: stats.yahtzee_rate,
            p250: stats.p_at_least(250).unwrap_or(0.0),
            single_turn_mean,
        })
    }

    fn abort(&mut self, what: &str) -> TrainError {
        let rec = json!({"event": "abort", "update": self.updates_done, "games": self.games_done, "reason": format!("non-finite {what}")});
        let _ = self.write(&rec).and_then(|_| Ok(self.metrics.flush()?));
        TrainError::NonFinite { update: self.updates_done, what: what.to_string() }
    }

    /// One optimizer step on `batch` (rows restricted by `adv` for PPO).
    fn optimize(
        &mut self,
        batch: &Batch,
        ppo_adv: Option<&[f64]>,
        k: StepCoefficients,
        lr: f64,
        dropout_index: u64,
        stats: &mut StepStats,
    ) -> Result<Vec<f64>, TrainError> {
        let algo = self.cfg.algo;
        let mut rng = stream(self.cfg.seed, Domain::Dropout, dropout_index);
        let (out, trace) = self.net.forward(batch.x.view(), &batch.score_masks, Some(&mut rng))?;
        let loss = match (algo.algorithm, ppo_adv) {
            (Algorithm::Reinforce, _) => reinforce_loss(&out, batch, &algo, k),
            (Algorithm::A2c, _) => a2c_loss(&out, batch, &algo, k),
            (Algorithm::Ppo, Some(adv)) => ppo_loss(&out, batch, adv, &algo, k),
            (Algorithm::Ppo, None) => unreachable!("PPO steps carry advantages"),
        };
        if !loss.parts.total.is_finite() {
            return Err(self.abort("loss"));
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&trace, &loss.grads, &mut grad);
        let (norm, clipped) = clip_gradients(&mut grad, algo.clip_tau);
        if !norm.is_finite() {
            return Err(self.abort("gradient"));
        }
        self.adam.update(self.net.params_mut(), &grad, lr)?;
        stats.add(&loss, &out, &batch.actions, norm, clipped);
        Ok(loss.advantages)
    }

    /// Collects one batch of games and applies the configured learner.
    pub fn step(&mut self) -> Result<(), TrainError> {
        let cfg = self.cfg.clone();
        let algo = cfg.algo;
        let k = self.updates_done;
        let total = self.schedule_updates();
        let start = self.games_done;
        let end = (start + cfg.train.batch_games).min(cfg.train.games);
        let trajs = collect_batch(&self.net, &cfg.features, &cfg.task_config(), cfg.seed, start..end, algo.rollout_dropout)?;
        let gamma = gamma_at(k, total, algo.gamma_min, algo.gamma_max);
        let (beta_roll, beta_score) = entropy_coefficients(k, total, &algo.entropy_schedule());
        let coeffs = StepCoefficients { gamma, beta_roll, beta_score };
        let lr = lr_at(k + 1, total, algo.lr, algo.lr_min_ratio);
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let batch = Batch::new(&refs, &algo.shaping, gamma);

        let kl_due = cfg.train.kl_every > 0 && k % cfg.train.kl_every == 0;
        let before = match (&self.probe, kl_due) {
            (Some(p), true) => Some(p.outputs(&self.net)?),
            _ => None,
        };

        let mut stats = StepStats::default();
        let advantages = match algo.algorithm {
            Algorithm::Reinforce | Algorithm::A2c => self.optimize(&batch, None, coeffs, lr, k, &mut stats)?,
            Algorithm::Ppo => {
                let adv = ppo_advantages(&batch, &algo, gamma);
                let n_eps = batch.episodes.len();
                let per_mb = algo.ppo_games_per_minibatch;
                let n_mb = n_eps.div_ceil(per_mb) as u64;
                for e in 0..algo.ppo_epochs as u64 {
                    let round = k * algo.ppo_epochs as u64 + e;
                    let mut order: Vec<usize> = (0..n_eps).collect();
                    order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, round));
                    for (j, eps) in order.chunks(per_mb).enumerate() {
                        let (sub, rows) = batch.select(eps);
                        let sub_adv: Vec<f64> = rows.iter().map(|&r| adv[r]).collect();
                        self.optimize(&sub, Some(&sub_adv), coeffs, lr, round * n_mb + j as u64, &mut stats)?;
                    }
                }
                adv
            }
        };

        let kl = match (&self.probe, before) {
            (Some(p), Some(old)) => Some(policy_kl(&old, &p.outputs(&self.net)?)),
            _ => None,
        };
        self.games_done = end;
        self.updates_done += 1;

        let steps = stats.steps.max(1) as f64;
        let scores: Vec<f64> = trajs.iter().map(|t| t.score as f64).collect();
        let shaped: Vec<f64> = batch.episodes.iter().map(|r| batch.rewards[r.clone()].iter().sum()).collect();
        let keeps: Vec<u8> = batch.actions.iter().filter_map(|a| if let Action::Keep(m) = a { Some(m.bits()) } else { None }).collect();
        let cats: Vec<usize> = batch.actions.iter().filter_map(|a| if let Action::Score(c) = a { Some(c.index()) } else { None }).collect();
        let rec = json!({
            "event": "batch",
            "update": self.updates_done,
            "games": self.games_done,
            "lr": lr,
            "gamma": gamma,
            "beta_roll": beta_roll,
            "beta_score": beta_score,
            "mean_score": mean(&scores),
            "mean_shaped_return": mean(&shaped),
            "loss": {
                "policy": stats.parts.policy / steps,
                "value": stats.parts.value / steps,
                "entropy": stats.parts.entropy / steps,
                "upper": stats.parts.upper / steps,
                "total": stats.parts.total / steps,
            },
            "explained_variance": explained_variance(&batch.old_values, &batch.returns(gamma)),
            "roll_entropy": stats.roll_entropy.0 / stats.roll_entropy.1.max(1) as f64,
            "score_entropy": stats.score_entropy.0 / stats.score_entropy.1.max(1) as f64,
            "kl": kl,
            "grad_norm": stats.grad_norm / steps,
            "clip_rate": stats.clipped as f64 / steps,
            "adv_mean": mean(&advantages),
            "adv_std": std_dev(&advantages),
            "mask_diversity": mask_diversity(&keeps),
            "roll_top3": top_k_frequency(&keeps.iter().map(|&m| m as usize).collect::<Vec<_>>(), 3),
            "score_top3": top_k_frequency(&cats, 3),
        });
        self.write(&rec)?;
        Ok(())
    }

    /// Runs to the configured game budget (or `stop_after_games`).
    pub fn run(mut self, opts: TrainOptions) -> Result<TrainSummary, TrainError> {
        let t = self.cfg.train;
        let clock = Instant::now();
        let stop = opts.stop_after_games.unwrap_or(t.games).min(t.games);
        while self.games_done < stop {
            let prev = self.games_done;
            self.step()?;
            let now = self.games_done;
            let crossed = |every: u64| every > 0 && now / every > prev / every;
            if crossed(t.eval_every) || self.games_done == t.games {
                let e = self.evaluate()?;
                self.write(&json!({"event": "eval", "eval": e}))?;
                if opts.progress {
                    eprintln!(
                        "[{:>7.1}s] games={} eval mean={:.2} median={:.1} bonus={:.1}% yahtzee={:.1}%",
                        clock.elapsed().as_secs_f64(),
                        e.games,
                        e.mean,
                        e.median,
                        e.bonus_rate,
                        e.yahtzee_rate
                    );
                }
                self.evals.push(e);
            }
            if crossed(t.checkpoint_every) || self.games_done == t.games {
                self.save(LATEST_CHECKPOINT)?;
            }
        }
        let finished = self.games_done >= t.games;
        self.save(LATEST_CHECKPOINT)?;
        if finished {
            fs::copy(self.out_dir.join(LATEST_CHECKPOINT), self.out_dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(TrainSummary {
            games: self.games_done,
            updates: self.updates_done,
            finished,
            evals: self.evals,
            out_dir: self.out_dir,
        })
    }
}

/// Evaluation records already present in a metrics log.
pub fn read_evals(path: &Path) -> Result<Vec<EvalRecord>, TrainError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let v: Value = serde_json::from_str(line)?;
        if v["event"] == "eval" {
            out.push(serde_json::from_value(v["eval"].clone())?);
        }
    }
    Ok(out)
}

/// Trains `cfg` in `out_dir`, resuming from its latest checkpoint if present.
pub fn train(cfg: &RunConfig, out_dir: &Path, opts: TrainOptions) -> Result<TrainSummary, TrainError> {
    Trainer::open(cfg, out_dir)?.run(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;

    fn tiny(alg: Algorithm) -> RunConfig {
        let mut c = RunConfig::for_algorithm(alg);
        c.net = NetConfig { hidden: 16, layers: 1, ..NetConfig::default() };
        c.train.games = 40;
        c.train.batch_games = 10;
        c.train.eval_every = 20;
        c.train.eval_games = 20;
        c.train.checkpoint_every = 20;
        c.train.kl_every = 2;
        c
    }

    #[test]
    fn every_algorithm_runs_and_logs() {
        for alg in [Algorithm::Reinforce, Algorithm::A2c, Algorithm::Ppo] {
            let dir = tempfile::tempdir().unwrap();
            let s = train(&tiny(alg), dir.path(), TrainOptions::default()).unwrap();
            assert!(s.finished && s.games == 40 && s.updates == 4);
            assert_eq!(s.evals.len(), 2);
            assert!(dir.path().join(FINAL_CHECKPOINT).exists());
            let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
            let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
            assert_eq!(lines[0]["event"], "header");
            assert_eq!(lines[0]["schema_version"], METRICS_SCHEMA_VERSION);
            let batches: Vec<&Value> = lines.iter().filter(|v| v["event"] == "batch").collect();
            assert_eq!(batches.len(), 4);
            for b in batches {
                assert!(b["explained_variance"].as_f64().unwrap() <= 1.0);
                assert!(b["roll_entropy"].as_f64().unwrap() >= 0.0);
                let cr = b["clip_rate"].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&cr));
            }
            assert!(lines[1]["kl"].as_f64().unwrap() >= 0.0);
        }
    }

    #[test]
    fn schedules_follow_the_schedule_horizon() {
        let mut c = tiny(Algorithm::Reinforce);
        c.train.schedule_games = Some(400);
        let d = tempfile::tempdir().unwrap();
        train(&c, d.path(), TrainOptions::default()).unwrap();
        let text = fs::read_to_string(d.path().join(METRICS_FILE)).unwrap();
        let batches: Vec<Value> = text
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap())
            .filter(|v| v["event"] == "batch")
            .collect();
        for (k, b) in batches.iter().enumerate() {
            let k = k as u64;
            let close = |a: &Value, b: f64| (a.as_f64().unwrap() - b).abs() <= 1e-12 * b.abs();
            assert!(close(&b["lr"], lr_at(k + 1, 40, c.algo.lr, c.algo.lr_min_ratio)));
            assert!(close(&b["gamma"], gamma_at(k, 40, c.algo.gamma_min, c.algo.gamma_max)));
        }
        c.train.schedule_games = Some(39);
        assert!(matches!(train(&c, d.path(), TrainOptions::default()), Err(TrainError::Config(_))));
    }

    #[test]
    fn single_turn_task_reports_turn_means() {
        let mut c = tiny(Algorithm::Reinforce);
        c.task = Task::SingleTurn;
        let dir = tempfile::tempdir().unwrap();
        let s = train(&c, dir.path(), TrainOptions::default()).unwrap();
        assert!(s.evals.iter().all(|e| e.single_turn_mean.is_some()));
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let c = tiny(Algorithm::A2c);
        let a = tempfile::tempdir().unwrap();
        train(&c, a.path(), TrainOptions::default()).unwrap();
        let b = tempfile::tempdir().unwrap();
        let part = train(&c, b.path(), TrainOptions { stop_after_games: Some(30), progress: false }).unwrap();
        assert!(!part.finished && part.games == 30);
        train(&c, b.path(), TrainOptions::default()).unwrap();
        let read = |d: &Path| fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        let ca = checkpoint::load(&a.path().join(FINAL_CHECKPOINT)).unwrap();
        let cb = checkpoint::load(&b.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(ca.net.params(), cb.net.params());
    }

    #[test]
    fn resume_rolls_back_metrics_written_after_the_checkpoint() {
        let c = tiny(Algorithm::A2c);
        let a = tempfile::tempdir().unwrap();
        train(&c, a.path(), TrainOptions::default()).unwrap();
        let b = tempfile::tempdir().unwrap();
        train(&c, b.path(), TrainOptions { stop_after_games: Some(20), progress: false }).unwrap();
        // Records appended after the checkpoint, as if the process died mid-run.
        let mut f = OpenOptions::new().append(true).open(b.path().join(METRICS_FILE)).unwrap();
        writeln!(f, "{{\"event\":\"batch\",\"update\":99}}").unwrap();
        drop(f);
        train(&c, b.path(), TrainOptions::default()).unwrap();
        assert_eq!(fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(b.path().join(METRICS_FILE)).unwrap());
    }

    #[test]
    fn changed_config_refuses_to_resume() {
        let c = tiny(Algorithm::A2c);
        let d = tempfile::tempdir().unwrap();
        train(&c, d.path(), TrainOptions { stop_after_games: Some(10), progress: false }).unwrap();
        let mut other = c.clone();
        other.algo.lr = 0.5;
        assert!(matches!(train(&other, d.path(), TrainOptions::default()), Err(TrainError::Resume(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_a_record() {
        let mut c = tiny(Algorithm::A2c);
        c.algo.lr = 1e300;
        c.algo.clip_tau = 0.0;
        let d = tempfile::tempdir().unwrap();
        let r = train(&c, d.path(), TrainOptions::default());
        assert!(matches!(r, Err(TrainError::NonFinite { .. }) | Err(TrainError::Network(_))), "{r:?}");
        let text = fs::read_to_string(d.path().join(METRICS_FILE)).unwrap();
        if let Err(TrainError::NonFinite { .. }) = r {
            assert!(text.lines().last().unwrap().contains("abort"));
        }
    }
}
