use super::*;
use crate::game::{is_legal, STEPS_PER_GAME};
use crate::nn::NetConfig;

fn net(mode: RollMode, seed: u64) -> (Network, FeatureConfig) {
    let f = FeatureConfig::default();
    let cfg = NetConfig { hidden: 16, layers: 1, dropout: 0.1, roll_mode: mode, layer_norm: true };
    (Network::new(cfg, feature_length(&f), seed).unwrap(), f)
}

#[test]
fn full_game_episodes_have_39_legal_steps() {
    for mode in [RollMode::Categorical32, RollMode::Bernoulli5] {
        let (n, f) = net(mode, 1);
        let trajs = collect_batch(&n, &f, &TaskConfig::default(), 3, 0..30, false).unwrap();
        for t in &trajs {
            assert_eq!(t.steps.len(), STEPS_PER_GAME);
            assert_eq!(t.rewards().iter().sum::<f64>(), t.score as f64);
            for (i, s) in t.steps.iter().enumerate() {
                assert_eq!(matches!(s.action, Action::Score(_)), i % 3 == 2);
                if let Action::Score(c) = s.action {
                    assert!(s.score_mask >> c.index() & 1 == 1);
                }
                assert!(s.log_prob <= 0.0 && s.log_prob.is_finite());
                assert!(s.value >= -1.0);
            }
        }
    }
}

#[test]
fn replaying_a_trajectory_reproduces_its_rewards() {
    let (n, f) = net(RollMode::Categorical32, 2);
    let t = &collect_batch(&n, &f, &TaskConfig::default(), 9, 4..5, false).unwrap()[0];
    let mut dice = stream(9, Domain::Dice, 4);
    let mut s = GameState::new_game(&mut dice);
    for step in &t.steps {
        assert!(is_legal(&s, step.action));
        let tr = apply_action(&s, step.action, &mut dice).unwrap();
        assert_eq!(tr.reward as f64, step.reward);
        s = tr.next;
    }
    assert!(s.is_terminal());
    assert_eq!(s.card.upper_total(), t.upper_total);
}

#[test]
fn collection_is_deterministic_and_chunk_independent() {
    let (n, f) = net(RollMode::Categorical32, 3);
    let a = collect_batch(&n, &f, &TaskConfig::default(), 5, 0..8, false).unwrap();
    let b = collect_batch(&n, &f, &TaskConfig::default(), 5, 0..8, false).unwrap();
    assert_eq!(a, b);
    let c = collect_batch(&n, &f, &TaskConfig::default(), 5, 4..8, false).unwrap();
    assert_eq!(a[4..], c[..]);
}

#[test]
fn single_turn_episodes() {
    let (n, f) = net(RollMode::Bernoulli5, 4);
    for empty in [false, true] {
        let task = TaskConfig { task: Task::SingleTurn, empty_card_only: empty };
        let trajs = collect_batch(&n, &f, &task, 6, 0..50, false).unwrap();
        for t in &trajs {
            assert_eq!(t.steps.len(), 3);
            assert_eq!(t.steps[2].reward, t.score as f64);
            let card_used = t.steps[0].features[36..49].iter().filter(|&&v| v == 1.0).count();
            if empty {
                assert_eq!(card_used, 0);
            }
        }
        let mean = evaluate_single_turn(&n, &f, empty, 40, 6).unwrap();
        assert!(mean >= 0.0 && mean <= 50.0);
    }
}

#[test]
fn contexts_leave_a_box_open_and_hit_reachable_totals() {
    let mut rng = stream(1, Domain::Context, 0);
    let mut seen_totals = std::collections::BTreeSet::new();
    for _ in 0..3000 {
        let card = sample_context(&mut rng);
        assert!(!card.is_full());
        let pattern = (card.used_mask() & 0x3f) as usize;
        let total = card.upper_total();
        assert!(upper_assignments()[pattern].iter().any(|&(t, _)| t == total));
        for c in Category::ALL.iter().filter(|c| c.is_upper() && card.is_used(**c)) {
            let v = card.get(*c).unwrap() as u32;
            assert_eq!(v % c.upper_face().unwrap() as u32, 0);
        }
        seen_totals.insert(total);
    }
    assert!(seen_totals.len() > 60);
}

#[test]
fn upper_assignment_table() {
    let t = upper_assignments();
    assert_eq!(t[0], vec![(0, [0; 6])]);
    assert_eq!(t[1].iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(t[63].last().unwrap().0, 105);
    for (pattern, opts) in t.iter().enumerate() {
        for (total, boxes) in opts {
            assert_eq!(boxes.iter().map(|&b| b as u32).sum::<u32>(), *total);
            for f in 0..6 {
                assert!(pattern >> f & 1 == 1 || boxes[f] == 0);
            }
        }
    }
}

#[test]
fn argmax_evaluation_is_legal_and_reproducible() {
    let (n, f) = net(RollMode::Categorical32, 5);
    let a = evaluate_network(&n, &f, 300, 2).unwrap();
    let b = evaluate_network(&n, &f, 300, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.card.is_full()));
    let wrong = FeatureConfig { include_joker: false, ..f };
    assert!(evaluate_network(&n, &wrong, 10, 2).is_err());
}

#[test]
fn kl_between_policies() {
    let (a, f) = net(RollMode::Categorical32, 6);
    let (b, _) = net(RollMode::Categorical32, 7);
    let probe = ProbeSet::new(&f, 1, 200).unwrap();
    assert_eq!(probe.x.nrows(), 200);
    let (oa, ob) = (probe.outputs(&a).unwrap(), probe.outputs(&b).unwrap());
    assert_eq!(policy_kl(&oa, &oa), 0.0);
    assert!(policy_kl(&oa, &ob) > 0.0);
    let (c, _) = net(RollMode::Bernoulli5, 6);
    let oc = probe.outputs(&c).unwrap();
    assert_eq!(policy_kl(&oc, &oc), 0.0);
}

#[test]
fn dropout_rollouts_are_reproducible_and_differ_from_eval_mode() {
    let f = FeatureConfig::default();
    let n = Network::new(NetConfig { hidden: 16, layers: 1, dropout: 0.5, ..NetConfig::default() }, feature_length(&f), 2).unwrap();
    let a = collect_batch(&n, &f, &TaskConfig::default(), 5, 0..4, true).unwrap();
    let b = collect_batch(&n, &f, &TaskConfig::default(), 5, 0..4, true).unwrap();
    let e = collect_batch(&n, &f, &TaskConfig::default(), 5, 0..4, false).unwrap();
    let lps = |t: &[Trajectory]| t.iter().flat_map(|t| t.steps.iter().map(|s| s.log_prob)).collect::<Vec<_>>();
    assert_eq!(lps(&a), lps(&b));
    assert_ne!(lps(&a), lps(&e));
}
