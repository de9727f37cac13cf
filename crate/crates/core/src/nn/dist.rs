//! Numerically stable distribution helpers.

use ndarray::{Array2, ArrayView1, ArrayView2};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Row-wise log-softmax. With masks, entry `j` of row `i` takes part only
/// when bit `j` of `masks[i]` is set; the rest come out as `-inf`.
pub fn masked_log_softmax(logits: ArrayView2<f64>, masks: Option<&[u16]>) -> Array2<f64> {
    let mut out = Array2::from_elem(logits.raw_dim(), f64::NEG_INFINITY);
    for (i, row) in logits.rows().into_iter().enumerate() {
        let allowed = |j: usize| masks.map_or(true, |m| m[i] >> j & 1 == 1);
        let m = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| allowed(j))
            .map(|(_, &z)| z)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row
            .iter()
            .enumerate()
            .filter(|&(j, _)| allowed(j))
            .map(|(_, &z)| (z - m).exp())
            .sum::<f64>()
            .ln();
        for (j, &z) in row.iter().enumerate() {
            if allowed(j) {
                out[[i, j]] = z - lse;
            }
        }
    }
    out
}

/// `-Σ p ln p` over entries with positive probability.
pub fn categorical_entropy(probs: ArrayView1<f64>, logp: ArrayView1<f64>) -> f64 {
    probs
        .iter()
        .zip(logp)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lp)| -p * lp)
        .sum()
}

/// Sum of the binary entropies of independent Bernoulli variables given as logits.
pub fn bernoulli_entropy(logits: ArrayView1<f64>) -> f64 {
    logits
        .iter()
        .map(|&x| {
            let p = sigmoid(x);
            -(p * log_sigmoid(x) + (1.0 - p) * log_sigmoid(-x))
        })
        .sum()
}
