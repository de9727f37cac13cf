//! Training-time health metrics.

use crate::game::NUM_KEEP_MASKS;

/// `1 - Var(returns - values) / Var(returns)`; zero when the returns are constant.
pub fn explained_variance(values: &[f64], returns: &[f64]) -> f64 {
    assert_eq!(values.len(), returns.len());
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
    };
    let vr = var(&mut returns.iter().copied());
    if vr <= 0.0 {
        return 0.0;
    }
    let vd = var(&mut returns.iter().zip(values).map(|(r, v)| r - v));
    1.0 - vd / vr
}

/// `KL(p || q)` over categorical distributions. Entries where `p` is zero
/// (masked actions) contribute nothing.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `KL(p || q)` for independent Bernoulli variables given their success probabilities.
pub fn bernoulli_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| categorical_kl(&[a, 1.0 - a], &[b, 1.0 - b]))
        .sum()
}

/// Distinct keep masks chosen, as a fraction of the 32 possible.
pub fn mask_diversity(masks: &[u8]) -> f64 {
    let mut seen = [false; NUM_KEEP_MASKS];
    for &m in masks {
        seen[m as usize] = true;
    }
    seen.iter().filter(|&&s| s).count() as f64 / NUM_KEEP_MASKS as f64
}

/// Fraction of decisions that fall in the `k` most frequent actions.
/// `actions` are action indices within one head.
pub fn top_k_frequency(actions: &[usize], k: usize) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let size = actions.iter().max().map_or(0, |m| m + 1);
    let mut hist = vec![0usize; size];
    for &a in actions {
        hist[a] += 1;
    }
    hist.sort_unstable_by(|a, b| b.cmp(a));
    hist.iter().take(k).sum::<usize>() as f64 / actions.len() as f64
}
