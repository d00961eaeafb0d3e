//! Confidence energy: the squared L2 norm of a softmax output.
//!
//! For `K` classes the energy lives in `[1/K, 1]` — `1/K` at the uniform
//! distribution, approaching `1` as the prediction becomes one-hot. The
//! residual chain terminates when the combined student's mean validation
//! energy reaches a fraction of the teacher's, and the same quantity gates
//! per-sample truncation at inference time.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::softmax::softmax_t;

/// Energy of a single logits row: `‖σ(logits)‖₂²` at temperature 1.
pub fn energy_sample(logits: &[f64]) -> Result<f64> {
    let p = softmax_t(logits, 1.0)?;
    Ok(p.iter().map(|v| v * v).sum())
}

/// Mean per-sample energy over a batch of logit rows.
pub fn energy_dataset(logits: &Matrix) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(Error::Domain("energy of an empty dataset".into()));
    }
    let mut total = 0.0;
    for i in 0..logits.rows() {
        total += energy_sample(logits.row(i))?;
    }
    Ok(total / logits.rows() as f64)
}
