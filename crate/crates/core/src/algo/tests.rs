use ndarray::{array, Array1, Array2};
use rand::Rng;

use super::*;
use crate::game::{Category, KeepMask};
use crate::nn::gradcheck::{max_relative_error, numeric_gradient};
use crate::nn::{masked_log_softmax, NetConfig, Network, RollMode};
use crate::rng::{stream, Domain};

const INPUT: usize = 9;

/// Outputs with a chosen score distribution on each row and zero values.
fn outputs_with_score_logits(logits: Array2<f64>, masks: Vec<u16>) -> Outputs {
    let rows = logits.nrows();
    let score_logp = masked_log_softmax(logits.view(), Some(&masks));
    let roll_logits = Array2::zeros((rows, 32));
    let roll_logp = masked_log_softmax(roll_logits.view(), None);
    Outputs {
        roll_mode: RollMode::Categorical32,
        roll_probs: roll_logp.mapv(f64::exp),
        roll_logp,
        roll_logits,
        score_probs: score_logp.mapv(f64::exp),
        score_logp,
        score_logits: logits,
        score_masks: masks,
        value: Array1::zeros(rows),
        upper: Array1::zeros(rows),
    }
}

fn random_trajectories(n: usize, len: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = stream(seed, Domain::Probe, 0);
    (0..n)
        .map(|g| {
            let steps = (0..len)
                .map(|t| {
                    let mask = rng.gen_range(1u16..0x2000);
                    let action = if t % 3 == 2 {
                        let open: Vec<usize> = (0..13).filter(|&c| mask >> c & 1 == 1).collect();
                        Action::Score(Category::from_index(open[rng.gen_range(0..open.len())]).unwrap())
                    } else {
                        Action::Keep(KeepMask::new(rng.gen_range(0..32)).unwrap())
                    };
                    Step {
                        features: (0..INPUT).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        action,
                        score_mask: mask,
                        log_prob: -rng.gen_range(0.5..4.0),
                        reward: if t % 3 == 2 { rng.gen_range(0..30) as f64 / 10.0 } else { 0.0 },
                        value: rng.gen_range(0.0..4.0),
                        upper_pred: rng.gen_range(-1.2..0.8),
                    }
                })
                .collect();
            Trajectory { game: g as u64, steps, upper_total: rng.gen_range(0..90), score: 0 }
        })
        .collect()
}

fn coefficients() -> StepCoefficients {
    StepCoefficients { gamma: 0.97, beta_roll: 0.07, beta_score: 0.04 }
}

#[test]
fn reinforce_policy_term_examples() {
    // log π = -1 on the chosen category and G - V = 2.
    let logits = array![[(1.0 - (-1.0f64).exp()).ln(), -1.0]];
    let out = outputs_with_score_logits(logits.clone(), vec![0b11]);
    let lp = out.score_log_prob(0, 1);
    let mut obj = Objective::new(1, RollMode::Categorical32);
    obj.policy_gradient(&out, &[Action::Score(Category::Twos)], &[2.0]);
    let (parts, _) = obj.finish(1);
    assert!((lp + 1.0).abs() < 1e-12, "{lp}");
    assert!((parts.policy - 2.0).abs() < 1e-12);

    let mut obj = Objective::new(1, RollMode::Categorical32);
    obj.policy_gradient(&out, &[Action::Score(Category::Twos)], &[0.0]);
    assert_eq!(obj.finish(1).0.policy, 0.0);
}

#[test]
fn reinforce_baseline_at_returns_has_no_policy_term() {
    let trajs = random_trajectories(2, 6, 3);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let batch = Batch::new(&refs, &ShapingConfig::default(), 1.0);
    let mut out = outputs_with_score_logits(Array2::zeros((batch.rows(), 13)), batch.score_masks.clone());
    out.value = Array1::from(batch.returns(1.0));
    let cfg = AlgoConfig { entropy_regime: Some(EntropyRegime::None), ..AlgoConfig::defaults(Algorithm::Reinforce) };
    let k = StepCoefficients { gamma: 1.0, beta_roll: 0.0, beta_score: 0.0 };
    let l = reinforce_loss(&out, &batch, &cfg, k);
    assert!(l.parts.policy.abs() < 1e-12);
    assert!(l.parts.value.abs() < 1e-12);
}

#[test]
fn doubling_value_weight_doubles_only_the_value_term() {
    let trajs = random_trajectories(3, 6, 4);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let net = small_net(RollMode::Categorical32);
    let batch = Batch::new(&refs, &ShapingConfig::default(), 1.0);
    let out = net.infer(batch.x.view(), &batch.score_masks).unwrap();
    for alg in [Algorithm::Reinforce, Algorithm::A2c] {
        let cfg = AlgoConfig::defaults(alg);
        let doubled = AlgoConfig { value_coef: 2.0 * cfg.value_coef, ..cfg };
        let loss = |c: &AlgoConfig| match alg {
            Algorithm::Reinforce => reinforce_loss(&out, &batch, c, coefficients()).parts,
            _ => a2c_loss(&out, &batch, c, coefficients()).parts,
        };
        let (a, b) = (loss(&cfg), loss(&doubled));
        assert!((b.value - 2.0 * a.value).abs() < 1e-12 * a.value.abs().max(1.0));
        assert_eq!((a.policy, a.entropy, a.upper), (b.policy, b.entropy, b.upper));
    }
}

#[test]
fn a2c_zero_td_error_leaves_auxiliary_terms() {
    // One-step episodes whose reward equals the predicted value.
    let net = small_net(RollMode::Categorical32);
    let mut trajs = random_trajectories(4, 1, 5);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let probe = Batch::new(&refs, &ShapingConfig::default(), 0.99);
    let out = net.infer(probe.x.view(), &probe.score_masks).unwrap();
    for (t, v) in trajs.iter_mut().zip(out.value.iter()) {
        t.steps[0].reward = *v;
    }
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let cfg = AlgoConfig::defaults(Algorithm::A2c);
    let batch = Batch::new(&refs, &ShapingConfig::default(), 0.99);
    let l = a2c_loss(&out, &batch, &cfg, coefficients());
    assert!(l.advantages.iter().all(|d| d.abs() < 1e-12));
    assert!(l.parts.policy.abs() < 1e-12 && l.parts.value.abs() < 1e-20);
    assert!((l.parts.total - (l.parts.upper - l.parts.entropy)).abs() < 1e-12);
}

#[test]
fn a2c_value_gradient_is_minus_two_lambda_delta() {
    let net = small_net(RollMode::Categorical32);
    let trajs = random_trajectories(2, 6, 6);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let batch = Batch::new(&refs, &ShapingConfig::default(), 0.99);
    let out = net.infer(batch.x.view(), &batch.score_masks).unwrap();
    let cfg = AlgoConfig::defaults(Algorithm::A2c);
    let l = a2c_loss(&out, &batch, &cfg, coefficients());
    let n = batch.rows() as f64;
    for (g, d) in l.grads.value.iter().zip(&l.advantages) {
        assert!((g - (-2.0 * cfg.value_coef * d / n)).abs() < 1e-15);
    }
}

#[test]
fn a2c_bootstrap_is_detached() {
    // Moving V(s') changes δ_t but the gradient still only reaches V(s_t).
    let trajs = random_trajectories(1, 3, 7);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let batch = Batch::new(&refs, &ShapingConfig::default(), 1.0);
    let mut out = outputs_with_score_logits(Array2::zeros((3, 13)), batch.score_masks.clone());
    out.value = array![1.0, 2.0, 3.0];
    let cfg = AlgoConfig { value_coef: 0.5, ..AlgoConfig::defaults(Algorithm::A2c) };
    let k = StepCoefficients { gamma: 1.0, beta_roll: 0.0, beta_score: 0.0 };
    let base = a2c_loss(&out, &batch, &cfg, k);
    out.value[1] = 5.0;
    let moved = a2c_loss(&out, &batch, &cfg, k);
    assert_ne!(base.advantages[0], moved.advantages[0]);
    // Row 0 gradient is -2λδ_0/n with the new δ_0 only.
    assert!((moved.grads.value[0] - (-2.0 * 0.5 * moved.advantages[0] / 3.0)).abs() < 1e-15);
}

#[test]
fn ppo_branch_examples() {
    let surrogate = |ratio: f64, adv: f64| {
        let out = outputs_with_score_logits(Array2::zeros((1, 13)), vec![0b1]);
        let mut obj = Objective::new(1, RollMode::Categorical32);
        // log π = 0 on the only legal entry, so old log-prob -ln r gives ratio r.
        obj.ppo_clip(&out, &[Action::Score(Category::Ones)], &[-ratio.ln()], &[adv], 0.2);
        obj.finish(1).0.policy
    };
    assert!((surrogate(1.0, 3.0) + 3.0).abs() < 1e-12);
    assert!((surrogate(1.5, 2.0) + 1.2 * 2.0).abs() < 1e-12);
    // Â < 0: min(0.5Â, 0.8Â) = 0.8Â.
    assert!((surrogate(0.5, -2.0) - 0.8 * 2.0).abs() < 1e-12);
    assert!((surrogate(0.5, 2.0) + 0.5 * 2.0).abs() < 1e-12);
}

#[test]
fn ppo_gradient_at_unit_ratio_matches_policy_gradient() {
    let net = small_net(RollMode::Bernoulli5);
    let trajs = random_trajectories(2, 6, 8);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let mut batch = Batch::new(&refs, &ShapingConfig::default(), 0.99);
    let out = net.infer(batch.x.view(), &batch.score_masks).unwrap();
    for (r, a) in batch.actions.iter().enumerate() {
        batch.old_log_probs[r] = match a {
            Action::Keep(m) => out.roll_log_prob(r, m.bits()),
            Action::Score(c) => out.score_log_prob(r, c.index()),
        };
    }
    let adv: Vec<f64> = (0..batch.rows()).map(|i| (i as f64 * 0.7).sin()).collect();
    let mut a = Objective::new(batch.rows(), out.roll_mode);
    a.ppo_clip(&out, &batch.actions, &batch.old_log_probs, &adv, 0.2);
    let mut b = Objective::new(batch.rows(), out.roll_mode);
    b.policy_gradient(&out, &batch.actions, &adv);
    let (ga, gb) = (a.finish(batch.rows()).1, b.finish(batch.rows()).1);
    for (x, y) in ga.roll_logits.iter().zip(gb.roll_logits.iter()).chain(ga.score_logits.iter().zip(gb.score_logits.iter())) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn entropy_bonus_examples() {
    let out = outputs_with_score_logits(Array2::zeros((2, 13)), vec![0b1, 0x1fff]);
    let mut obj = Objective::new(2, RollMode::Categorical32);
    obj.entropy_bonus(&out, &[Action::Score(Category::Ones), Action::Keep(KeepMask::NONE)], 1.0, 1.0);
    let (p, g) = obj.finish(1);
    // A single legal category carries no entropy; the uniform roll head has ln 32.
    assert!((p.entropy - 32f64.ln()).abs() < 1e-12);
    assert!(g.score_logits.row(0).iter().all(|&v| v == 0.0));
}

#[test]
fn entropy_on_both_heads_adds_each_head_on_every_row() {
    let logits = array![[0.3, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0; 13]];
    let out = outputs_with_score_logits(logits, vec![0b111, 0x1fff]);
    let mut both = Objective::new(2, RollMode::Categorical32);
    both.entropy_bonus_all(&out, 0.2, 0.7);
    let mut split = Objective::new(2, RollMode::Categorical32);
    let keeps = [Action::Keep(KeepMask::NONE); 2];
    let scores = [Action::Score(Category::Ones); 2];
    split.entropy_bonus(&out, &keeps, 0.2, 0.7);
    split.entropy_bonus(&out, &scores, 0.2, 0.7);
    let (pb, gb) = both.finish(2);
    let (ps, gs) = split.finish(2);
    assert!((pb.entropy - ps.entropy).abs() < 1e-15);
    assert_eq!(gb.roll_logits, gs.roll_logits);
    assert_eq!(gb.score_logits, gs.score_logits);
    let expected = 0.2 * 32f64.ln() + 0.7 * (out.score_entropy(0) + 13f64.ln()) / 2.0;
    assert!((pb.entropy - expected).abs() < 1e-12);
}

#[test]
fn rewards_sum_to_score_without_shaping() {
    let trajs = random_trajectories(3, 9, 9);
    for t in &trajs {
        let refs = [t];
        let b = Batch::new(&refs, &ShapingConfig::default(), 1.0);
        assert_eq!(b.rewards, t.rewards());
        assert!((b.returns(1.0)[0] - t.rewards().iter().sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn select_keeps_episode_rows() {
    let trajs = random_trajectories(4, 6, 10);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let b = Batch::new(&refs, &ShapingConfig { enabled: true, ..ShapingConfig::default() }, 0.99);
    let (s, rows) = b.select(&[2, 0]);
    assert_eq!(rows, (12..18).chain(0..6).collect::<Vec<_>>());
    assert_eq!(s.episodes, vec![0..6, 6..12]);
    assert_eq!(s.x.row(0), b.x.row(12));
    assert_eq!(s.rewards[6..], b.rewards[..6]);
}

fn small_net(mode: RollMode) -> Network {
    let cfg = NetConfig { hidden: 8, layers: 2, dropout: 0.2, roll_mode: mode, layer_norm: true };
    Network::new(cfg, INPUT, 21).unwrap()
}

/// Finite-difference check of a loss whose detached quantities are frozen
/// at the starting parameters.
fn check_loss(
    mode: RollMode,
    alg: Algorithm,
    value_loss: ValueLoss,
    gae_lambda: Option<f64>,
    entropy_heads: EntropyHeads,
    normalize: bool,
) -> f64 {
    let mut net = small_net(mode);
    let trajs = random_trajectories(3, 6, 11);
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let cfg = AlgoConfig {
        value_loss,
        gae_lambda,
        entropy_heads,
        normalize_advantages: normalize,
        value_coef: 0.3,
        shaping: ShapingConfig { enabled: true, beta_shape: 0.5, beta_regression: 0.8, literal_eq13: false },
        ..AlgoConfig::defaults(alg)
    };
    let k = coefficients();
    let mut batch = Batch::new(&refs, &cfg.shaping, k.gamma);
    // Behaviour policy near the current one, so ratios straddle the clip range.
    let start = net.infer(batch.x.view(), &batch.score_masks).unwrap();
    for (r, a) in batch.actions.iter().enumerate() {
        let lp = match a {
            Action::Keep(m) => start.roll_log_prob(r, m.bits()),
            Action::Score(c) => start.score_log_prob(r, c.index()),
        };
        batch.old_log_probs[r] = lp + 0.3 * (r as f64 * 1.3).sin();
    }
    let forward = |net: &Network| {
        let mut r = stream(5, Domain::Dropout, 0);
        net.forward(batch.x.view(), &batch.score_masks, Some(&mut r)).unwrap()
    };
    let (out, trace) = forward(&net);
    let ppo_adv = ppo_advantages(&batch, &cfg, k.gamma);
    let loss = match alg {
        Algorithm::Reinforce => reinforce_loss(&out, &batch, &cfg, k),
        Algorithm::A2c => a2c_loss(&out, &batch, &cfg, k),
        Algorithm::Ppo => ppo_loss(&out, &batch, &ppo_adv, &cfg, k),
    };
    let mut analytic = vec![0.0; net.num_params()];
    net.backward(&trace, &loss.grads, &mut analytic);

    // Constants held fixed: advantages and value targets.
    let adv = loss.advantages.clone();
    let targets: Vec<f64> = match alg {
        Algorithm::Reinforce => batch.returns(k.gamma),
        Algorithm::A2c => adv.iter().zip(out.value.iter()).map(|(a, v)| a + v).collect(),
        Algorithm::Ppo => adv.iter().zip(&batch.old_values).map(|(a, v)| a + v).collect(),
    };
    let policy_adv = if cfg.normalize_advantages { normalize_advantages(&adv) } else { adv.clone() };
    let frozen = |out: &Outputs| {
        let mut obj = Objective::new(batch.rows(), out.roll_mode);
        match alg {
            Algorithm::Ppo => obj.ppo_clip(out, &batch.actions, &batch.old_log_probs, &policy_adv, cfg.ppo_epsilon),
            _ => obj.policy_gradient(out, &batch.actions, &policy_adv),
        }
        match (alg, value_loss) {
            (Algorithm::Reinforce, ValueLoss::Abs) => obj.value_abs(out, &targets, cfg.value_coef),
            _ => obj.value_squared(out, &targets, cfg.value_coef),
        }
        match cfg.entropy_heads {
            EntropyHeads::Acting => obj.entropy_bonus(out, &batch.actions, k.beta_roll, k.beta_score),
            EntropyHeads::Both => obj.entropy_bonus_all(out, k.beta_roll, k.beta_score),
        }
        obj.upper_regression(out, &batch.upper_targets, cfg.shaping.beta_regression);
        obj.finish(batch.rows()).0.total
    };
    assert!((frozen(&out) - loss.parts.total).abs() < 1e-12);
    let base = net.params().to_vec();
    let numeric = numeric_gradient(&base, 1e-4, |p| {
        net.params_mut().copy_from_slice(p);
        frozen(&forward(&net).0)
    });
    max_relative_error(&analytic, &numeric, 1e-6)
}

#[test]
fn loss_gradients_match_finite_differences() {
    for mode in [RollMode::Categorical32, RollMode::Bernoulli5] {
        for (alg, vl, lambda) in [
            (Algorithm::Reinforce, ValueLoss::Abs, None),
            (Algorithm::Reinforce, ValueLoss::Squared, None),
            (Algorithm::A2c, ValueLoss::Squared, None),
            (Algorithm::A2c, ValueLoss::Squared, Some(0.6)),
            (Algorithm::Ppo, ValueLoss::Squared, Some(0.3)),
        ] {
            for (heads, norm) in [(EntropyHeads::Both, true), (EntropyHeads::Acting, false)] {
                let err = check_loss(mode, alg, vl, lambda, heads, norm);
                assert!(err < 1e-4, "{mode:?} {alg:?} {vl:?} {lambda:?} {heads:?} {norm}: {err}");
            }
        }
    }
}

#[test]
fn defaults_follow_the_tables() {
    let r = AlgoConfig::defaults(Algorithm::Reinforce);
    assert_eq!((r.lr, r.lr_min_ratio, r.gamma_min, r.gamma_max, r.clip_tau, r.value_coef), (0.001, 0.01, 0.95, 1.0, 0.0, 0.025));
    let a = AlgoConfig::defaults(Algorithm::A2c);
    assert_eq!((a.lr, a.lr_min_ratio, a.gamma_min, a.clip_tau, a.value_coef), (0.0001, 0.05, 0.99, 1.0, 0.005));
    assert_eq!((a.entropy.roll_max, a.entropy.score_min, a.entropy.hold, a.entropy.anneal), (0.1, 0.01, 0.075, 0.9));
    assert!(a.shaping.enabled && !r.shaping.enabled);
    assert!(a.normalize_advantages && !r.normalize_advantages);
    let p = AlgoConfig::defaults(Algorithm::Ppo);
    assert_eq!((p.ppo_epsilon, p.ppo_epochs, p.ppo_games_per_minibatch, p.value_coef), (0.2, 4, 4, 0.02));
    for c in [r, a, p] {
        assert_eq!(c.entropy_heads, EntropyHeads::Both);
        c.validate().unwrap();
    }
    assert!(AlgoConfig { ppo_epsilon: 1.0, ..p }.validate().is_err());
}
