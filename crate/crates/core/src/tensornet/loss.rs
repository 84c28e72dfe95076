use crate::error::{Error, Result};

/// Mean of squared componentwise differences.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse operands", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse`] with respect to `pred`.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse operands", target.len(), pred.len()));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}
