//! Objective functions.

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ log(1 + exp(l·f)) + (λ/2)·‖w‖²`, with `l = +1` for valid and `-1` for
/// corrupted triples.
pub fn softplus_loss(scores: &[f64], labels: &[f64], weight: &[f64], lambda: f64) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let data: f64 = scores.iter().zip(labels).map(|(&f, &l)| softplus(l * f)).sum();
    data + 0.5 * lambda * weight.iter().map(|w| w * w).sum::<f64>()
}

/// `max(0, γ + pos − neg)`.
#[inline]
pub fn margin_loss(pos_score: f64, neg_score: f64, gamma: f64) -> f64 {
    (gamma + pos_score - neg_score).max(0.0)
}
