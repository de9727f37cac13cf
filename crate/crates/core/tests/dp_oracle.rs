use std::collections::HashMap;
use std::sync::OnceLock;
use std::time::Instant;

use yahtzee_core::dp::{self, DiceTables, DpPolicy, GreedyTurnPolicy, MacroState, ValueTable};
use yahtzee_core::eval::{simulate_policy, EvalStats};
use yahtzee_core::game::{Action, Category, Dice, GameState, Scorecard};
use yahtzee_core::policy::RandomPolicy;
use yahtzee_core::rng::{stream, Domain};

fn table() -> &'static ValueTable {
    static T: OnceLock<ValueTable> = OnceLock::new();
    T.get_or_init(|| {
        let t = Instant::now();
        let table = dp::solve();
        eprintln!("solved in {:.1}s", t.elapsed().as_secs_f64());
        table
    })
}

/// Card with every box used except `open`, all entries zero.
fn card_with_only(open: &[Category]) -> Scorecard {
    let mut card = Scorecard::new();
    for c in Category::ALL {
        if !open.contains(&c) {
            card.set(c, 0).unwrap();
        }
    }
    card
}

/// Ordered-dice expectimax for one remaining box with no future: the
/// player re-rolls to maximise the expected points of `cat`.
fn lone_box_oracle(cat: Category, card: &Scorecard) -> f64 {
    fn points(dice: [u8; 5], cat: Category, card: &Scorecard) -> f64 {
        let state = GameState {
            dice: Dice::new(dice).unwrap(),
            card: *card,
            rolls_used: 2,
        };
        dp::immediate_points(&state, cat)
    }
    fn value(
        dice: [u8; 5],
        rolls_left: u32,
        cat: Category,
        card: &Scorecard,
        memo: &mut HashMap<([u8; 5], u32), f64>,
    ) -> f64 {
        if rolls_left == 0 {
            return points(dice, cat, card);
        }
        if let Some(&v) = memo.get(&(dice, rolls_left)) {
            return v;
        }
        let best = (0u8..32)
            .map(|mask| {
                let free: Vec<usize> = (0..5).filter(|i| mask >> i & 1 == 0).collect();
                let outcomes = 6usize.pow(free.len() as u32);
                let mut total = 0.0;
                for o in 0..outcomes {
                    let mut d = dice;
                    let mut code = o;
                    for &i in &free {
                        d[i] = (code % 6) as u8 + 1;
                        code /= 6;
                    }
                    d.sort_unstable();
                    total += value(d, rolls_left - 1, cat, card, memo);
                }
                total / outcomes as f64
            })
            .fold(f64::NEG_INFINITY, f64::max);
        memo.insert((dice, rolls_left), best);
        best
    }
    let mut memo = HashMap::new();
    let mut total = 0.0;
    for o in 0..7776usize {
        let mut d = [0u8; 5];
        let mut code = o;
        for v in &mut d {
            *v = (code % 6) as u8 + 1;
            code /= 6;
        }
        d.sort_unstable();
        total += value(d, 2, cat, card, &mut memo);
    }
    total / 7776.0
}

#[test]
fn start_value_matches_known_optimum() {
    let v = table().start_value();
    eprintln!("optimal expected score {v:.6}");
    assert!((v - 254.59).abs() <= 0.005, "{v}");
}

#[test]
fn single_open_box_matches_standalone_expectimax() {
    // A lone Yahtzee box never triggers the joker; Chance and Small Straight
    // take the ordinary scoring path.
    let cases = [
        (Category::Yahtzee, card_with_only(&[Category::Yahtzee])),
        (Category::Chance, card_with_only(&[Category::Chance])),
        (Category::SmallStraight, card_with_only(&[Category::SmallStraight])),
    ];
    for (cat, card) in cases {
        let m = MacroState::from_card(&card);
        let solved = table().value(m);
        let widget = dp::turn_widget(m, table());
        let oracle = lone_box_oracle(cat, &card);
        assert!((solved - oracle).abs() < 1e-9, "{cat}: {solved} vs {oracle}");
        assert!((widget - oracle).abs() < 1e-9);
    }
}

#[test]
fn lone_box_scoring_is_forced_for_every_roll() {
    let tables = DiceTables::get();
    for cat in [Category::LargeStraight, Category::Fours, Category::Chance] {
        let card = card_with_only(&[cat]);
        for roll in &tables.rolls {
            let state = GameState { dice: *roll, card, rolls_used: 2 };
            assert_eq!(dp::optimal_action(&state, table()).unwrap(), Action::Score(cat));
        }
    }
}

#[test]
fn optimal_action_examples() {
    let state = GameState {
        dice: Dice::new([2, 3, 4, 5, 6]).unwrap(),
        card: card_with_only(&[Category::LargeStraight]),
        rolls_used: 2,
    };
    assert_eq!(dp::optimal_action(&state, table()).unwrap(), Action::Score(Category::LargeStraight));

    let state = GameState {
        dice: Dice::new([5, 5, 5, 5, 5]).unwrap(),
        card: Scorecard::new(),
        rolls_used: 0,
    };
    match dp::optimal_action(&state, table()).unwrap() {
        Action::Keep(m) => assert_eq!(m.bits(), 0b11111),
        other => panic!("expected a keep, got {other}"),
    }

    let done = card_with_only(&[]);
    let terminal = GameState {
        dice: Dice::new([1, 1, 1, 1, 1]).unwrap(),
        card: done,
        rolls_used: 0,
    };
    assert!(dp::optimal_action(&terminal, table()).is_err());
}

#[test]
fn optimal_actions_are_legal() {
    let mut rng = stream(5, Domain::Context, 0);
    let mut policy = DpPolicy::new(table());
    let mut state = GameState::new_game(&mut rng);
    while !state.is_terminal() {
        let a = policy.act(&state);
        assert!(yahtzee_core::game::is_legal(&state, a));
        assert_eq!(a, dp::optimal_action(&state, table()).unwrap());
        state = yahtzee_core::game::apply_action(&state, a, &mut rng).unwrap().next;
    }
}

#[test]
fn random_greedy_optimal_sandwich() {
    let n = 100_000;
    let seed = 11;
    let mean = |records: Vec<yahtzee_core::eval::GameRecord>| EvalStats::from_records(&records).unwrap().mean;
    let random = mean(simulate_policy(|c| RandomPolicy::new(stream(seed, Domain::Policy, c)), n, seed).unwrap());
    let greedy = mean(simulate_policy(|_| GreedyTurnPolicy::default(), n, seed).unwrap());
    let optimal = mean(simulate_policy(|_| DpPolicy::new(table()), n, seed).unwrap());
    eprintln!("random {random:.2} < greedy {greedy:.2} < optimal {optimal:.2}");
    assert!(random < greedy && greedy < optimal);
}

#[test]
fn optimal_play_mean_over_a_million_games() {
    let t = Instant::now();
    let records = simulate_policy(|_| DpPolicy::new(table()), 1_000_000, 2024).unwrap();
    let stats = EvalStats::from_records(&records).unwrap();
    eprintln!("1M games in {:.0}s: {}", t.elapsed().as_secs_f64(), stats.summary());
    assert!((stats.mean - 254.59).abs() <= 0.3, "{}", stats.mean);
    assert_eq!(stats.p_at_least(50), Some(1.0));
}
