//! Central finite differences for verifying hand-written gradients.

/// Numerical gradient of `f` at `params` by the five-point central
/// difference with step `h` (truncation error of order `h⁴`).
pub fn numeric_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            let mut at = |d: f64| {
                p[i] = orig + d;
                f(&p)
            };
            let (u1, d1, u2, d2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            p[i] = orig;
            (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
