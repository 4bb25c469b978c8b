use crate::error::{Error, Result};

/// Stable per-element binary cross-entropy on a logit.
pub fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub(crate) fn bce_logits_value(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::dim("bce_logits_loss", &[logits.len()], &[labels.len()]));
    }
    let mut total = 0.0;
    for (i, (&z, &y)) in logits.iter().zip(labels).enumerate() {
        if !z.is_finite() {
            return Err(Error::Numeric(format!("logit {i} = {z}")));
        }
        if y != 0.0 && y != 1.0 {
            return Err(Error::Parameter(format!("label {i} = {y} is not binary")));
        }
        total += bce_term(z, y);
    }
    Ok(total / logits.len() as f64)
}

/// Mean binary cross-entropy with logits and its gradient `(σ(z) − y) / B`.
pub fn bce_logits_loss(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = bce_logits_value(logits, labels)?;
    let n = logits.len() as f64;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| (sigmoid(z) - y) / n)
        .collect();
    Ok((loss, grad))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
