//! Conditional value-at-risk of discrete distributions.

/// Index order of `values` from largest to smallest.
fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// Greedy solution of `max { π·v : 0 <= π <= p/α, sum π = 1 }`.
///
/// Returns `(cvar, var)` where `var` is the value at which the unit mass is
/// exhausted, i.e. the upper α-quantile.
pub fn cvar_with_threshold(values: &[f64], probs: &[f64], alpha: f64) -> (f64, f64) {
    assert_eq!(values.len(), probs.len(), "values and probabilities differ in length");
    assert!(!values.is_empty(), "CVaR of an empty distribution");
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1], got {alpha}");
    let total: f64 = probs.iter().sum();
    let mut remaining = 1.0;
    let mut acc = 0.0;
    let mut threshold = values[0];
    for i in descending(values) {
        if probs[i] <= 0.0 {
            continue;
        }
        let take = (probs[i] / (alpha * total)).min(remaining);
        acc += take * values[i];
        remaining -= take;
        threshold = values[i];
        if remaining <= 1e-15 {
            break;
        }
    }
    if remaining > 1e-15 {
        // Rounding left a sliver of mass; it belongs to the last value reached.
        acc += remaining * threshold;
    }
    (acc, threshold)
}

/// CVaR at level `alpha` of the discrete distribution `(values, probs)`.
/// `alpha = 1` gives the mean, `alpha <= min p` the maximum.
pub fn cvar_discrete(values: &[f64], probs: &[f64], alpha: f64) -> f64 {
    cvar_with_threshold(values, probs, alpha).0
}

/// Two-level CVaR: inner over `p_inner` for each outer scenario, outer over
/// `p_outer`. `values[s][u]` is the objective of scenario pair `(s, u)`.
pub fn nested_cvar(values: &[Vec<f64>], p_outer: &[f64], p_inner: &[f64], alpha: f64) -> f64 {
    let inner: Vec<f64> = values.iter().map(|row| cvar_discrete(row, p_inner, alpha)).collect();
    cvar_discrete(&inner, p_outer, alpha)
}
