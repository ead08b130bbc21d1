use crate::error::{Error, Result};

use super::Real;

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the loss.
pub const P_CLAMP: f64 = 1e-7;

/// Logistic function without overflow for large |logit|.
pub fn sigmoid<R: Real>(z: R) -> R {
    if z >= R::zero() {
        R::one() / (R::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (R::one() + e)
    }
}

fn check_targets<R: Real>(y: &[R]) -> Result<()> {
    if let Some(bad) = y.iter().find(|&&v| v != R::zero() && v != R::one()) {
        return Err(Error::invalid(format!("binary target must be 0 or 1, got {bad:?}")));
    }
    Ok(())
}

fn clamped_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy of probabilities.
pub fn bce_loss<R: Real>(p: &[R], y: &[R]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::shape("prediction and target lengths differ or are empty"));
    }
    check_targets(y)?;
    Ok(p.iter().zip(y).map(|(p, y)| clamped_bce(p.f64(), y.f64())).sum::<f64>() / p.len() as f64)
}

/// Mean BCE on `sigmoid(logits)` and its gradient with respect to the logits,
/// `(σ(z) − y) / N`.
pub fn bce_with_logits<R: Real>(logits: &[R], y: &[R]) -> Result<(f64, Vec<R>)> {
    if logits.len() != y.len() || logits.is_empty() {
        return Err(Error::shape("logit and target lengths differ or are empty"));
    }
    check_targets(y)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let p = sigmoid(z.f64());
            loss += clamped_bce(p, t.f64());
            R::of((p - t.f64()) / n)
        })
        .collect();
    Ok((loss / n, grad))
}
