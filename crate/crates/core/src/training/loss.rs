use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy over a batch and its gradient with respect to
/// each probability, `(p - y) / (N p (1 - p))` at the clamped `p`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if p.len() != y.len() {
        return Err(Error::dim("bce labels", p.len(), y.len()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::InvalidLabel(bad));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParameter("probability outside [0, 1]".into()));
    }

    let n = p.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= yi * q.ln() + (1.0 - yi) * (1.0 - q).ln();
        grad.push((q - yi) / (n * q * (1.0 - q)));
    }
    Ok((total / n, grad))
}
