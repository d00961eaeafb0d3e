//! Temperature softmax and its log variant, stabilized by max-subtraction.

use crate::error::{Error, Result};

/// Softmax of `logits / t`.
///
/// Entries are positive and sum to one; the computation subtracts the max
/// logit first so arbitrarily large logits stay finite.
pub fn softmax_t(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    if logits.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("softmax of non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| ((v - max) / t).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Log-softmax of `logits / t`, computed without leaving log space.
pub fn log_softmax_t(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    if logits.is_empty() {
        return Err(Error::Domain("log-softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("log-softmax of non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|&v| ((v - max) / t).exp())
            .sum::<f64>()
            .ln()
            * t;
    Ok(logits.iter().map(|&v| (v - lse) / t).collect())
}
