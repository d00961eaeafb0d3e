//! The distillation objective and its exact gradients.
//!
//! The combined loss on a sample is
//!
//! ```text
//! L = τ · t² · L_match(σ(S/t), σ(T/t))  +  (1 − τ) · L_CE(σ(S), y)
//! ```
//!
//! with a selectable teacher-match term: KL divergence between the softened
//! distributions, squared L2 between the softened distributions, or squared
//! L2 directly on the logits (the form the informativeness analysis uses,
//! whose output gradient norm is exactly `2‖S − T‖₂`).
//!
//! All gradients here are analytic and with respect to the student logits
//! `S`; they are checked against central finite differences in the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softmax::{log_softmax_t, softmax_t};

/// Teacher-match term of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// KL(teacher ‖ student) between temperature-softened distributions.
    Kl,
    /// Squared L2 between temperature-softened distributions.
    L2Prob,
    /// Squared L2 directly on logits; ignores the temperature inside the
    /// match term (the `t²` prefactor of the combined loss still applies).
    L2Logit,
}

/// Where the cross-entropy term reads its logits when training a
/// res-student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeTargetMode {
    /// Cross-entropy on the combined logits (previous student plus the
    /// network in training), gradient flowing only to the trainee. Residual
    /// logits alone carry no class semantics, so this is the default.
    Combined,
    /// Cross-entropy on the trainee's own logits, even when they are
    /// residuals.
    ResidualOnly,
}

/// Hyper-parameters of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdLossParams {
    /// Mixing weight of the teacher-match term, in `[0, 1]`.
    pub tau: f64,
    /// Softening temperature, `> 0`.
    pub temperature: f64,
    pub kind: LossKind,
    pub ce_target_mode: CeTargetMode,
}

impl KdLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Domain(format!("tau must be in [0,1], got {}", self.tau)));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::Domain(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Cross-entropy of `softmax(logits)` against a hard label.
///
/// Returns the loss and its gradient `σ(logits) − onehot(label)`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::Domain(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let logp = log_softmax_t(logits, 1.0)?;
    let loss = -logp[label];
    let mut grad: Vec<f64> = logp.iter().map(|&lp| lp.exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// The teacher-match term and its gradient with respect to the student
/// logits `s`.
pub fn match_loss(s: &[f64], t_logits: &[f64], kind: LossKind, t: f64) -> Result<(f64, Vec<f64>)> {
    if s.len() != t_logits.len() {
        return Err(Error::shape(
            "match_loss",
            format!("{} logits", s.len()),
            format!("{}", t_logits.len()),
        ));
    }
    match kind {
        LossKind::Kl => {
            let p_t = softmax_t(t_logits, t)?;
            let logp_t = log_softmax_t(t_logits, t)?;
            let logp_s = log_softmax_t(s, t)?;
            let loss: f64 = p_t
                .iter()
                .zip(logp_t.iter().zip(&logp_s))
                .map(|(&p, (&lt, &ls))| p * (lt - ls))
                .sum();
            let p_s = softmax_t(s, t)?;
            let grad = p_s
                .iter()
                .zip(&p_t)
                .map(|(&ps, &pt)| (ps - pt) / t)
                .collect();
            // Rounding can leave a tiny negative value when the distributions
            // coincide; clamp so the loss stays a divergence.
            Ok((loss.max(0.0), grad))
        }
        LossKind::L2Prob => {
            let p_s = softmax_t(s, t)?;
            let p_t = softmax_t(t_logits, t)?;
            let diff: Vec<f64> = p_s.iter().zip(&p_t).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum();
            // Chain rule through the softmax Jacobian (diag(p) − p pᵀ)/t.
            let inner: f64 = diff.iter().zip(&p_s).map(|(d, p)| d * p).sum();
            let grad = p_s
                .iter()
                .zip(&diff)
                .map(|(&p, &d)| 2.0 / t * p * (d - inner))
                .collect();
            Ok((loss, grad))
        }
        LossKind::L2Logit => {
            if t <= 0.0 || !t.is_finite() {
                return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
            }
            let diff: Vec<f64> = s.iter().zip(t_logits).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum();
            let grad = diff.iter().map(|d| 2.0 * d).collect();
            Ok((loss, grad))
        }
    }
}

/// Combined loss on one sample: `τ·t²·match + (1−τ)·CE`, cross-entropy taken
/// on the student logits themselves.
pub fn kd_loss(
    s: &[f64],
    t_logits: &[f64],
    label: usize,
    params: &KdLossParams,
) -> Result<(f64, Vec<f64>)> {
    kd_loss_with_base(s, None, t_logits, label, params)
}

/// Combined loss where the cross-entropy term may read `base + s` instead of
/// `s` (the combined-logits mode used when training res-students; gradients
/// flow only to `s`). `base = None` behaves exactly like [`kd_loss`].
pub fn kd_loss_with_base(
    s: &[f64],
    base: Option<&[f64]>,
    t_logits: &[f64],
    label: usize,
    params: &KdLossParams,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let t = params.temperature;
    let (m_loss, m_grad) = match_loss(s, t_logits, params.kind, t)?;
    let ce_input: Vec<f64> = match (params.ce_target_mode, base) {
        (CeTargetMode::Combined, Some(b)) => {
            if b.len() != s.len() {
                return Err(Error::shape(
                    "kd_loss base logits",
                    format!("{}", s.len()),
                    format!("{}", b.len()),
                ));
            }
            s.iter().zip(b).map(|(a, b)| a + b).collect()
        }
        _ => s.to_vec(),
    };
    let (c_loss, c_grad) = ce_loss(&ce_input, label)?;
    let w_match = params.tau * t * t;
    let w_ce = 1.0 - params.tau;
    let loss = w_match * m_loss + w_ce * c_loss;
    // d(σ(base + s))/ds = d(σ(base + s))/d(base + s); base is constant.
    let grad = m_grad
        .iter()
        .zip(&c_grad)
        .map(|(mg, cg)| w_match * mg + w_ce * cg)
        .collect();
    Ok((loss, grad))
}
