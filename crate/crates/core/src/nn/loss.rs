//! Loss functions with analytic gradients.

use ndarray::{Array1, Array2};

use crate::error::{data_err, numerical_err, Error, Result};

/// Mean activations are clamped into [eps, 1-eps] before the Bernoulli KL.
pub const KL_CLAMP_EPS: f64 = 1e-6;

/// Mean squared error over all elements; gradient w.r.t. the prediction.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return data_err(format!(
            "mse shape mismatch: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        ));
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    Ok((loss, grad))
}

/// Bernoulli KL sparsity penalty.
///
/// Each mean activation is clamped into `[KL_CLAMP_EPS, 1 - KL_CLAMP_EPS]`
/// before evaluation; the gradient of the composed (clamped) function is
/// zero wherever the clamp is active, so finite differences agree.
pub fn kl_sparsity(rho: f64, rho_hat: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("sparsity target rho={rho} must be in (0, 1)")));
    }
    let lo = KL_CLAMP_EPS;
    let hi = 1.0 - KL_CLAMP_EPS;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(rho_hat.len());
    for (j, &raw) in rho_hat.iter().enumerate() {
        if !raw.is_finite() {
            return numerical_err("non-finite mean activation in kl_sparsity");
        }
        let c = raw.clamp(lo, hi);
        loss += rho * (rho / c).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - c)).ln();
        if raw >= lo && raw <= hi {
            grad[j] = -rho / c + (1.0 - rho) / (1.0 - c);
        }
    }
    Ok((loss, grad))
}

/// Mean negative log-probability of the true class.
///
/// Takes softmax outputs and integer labels; the returned gradient is the
/// fused softmax/cross-entropy gradient w.r.t. the pre-softmax logits,
/// `(p - y) / batch`.
pub fn cross_entropy_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = probs.dim();
    if labels.len() != batch {
        return data_err(format!(
            "cross entropy: {} rows but {} labels",
            batch,
            labels.len()
        ));
    }
    if batch == 0 {
        return data_err("cross entropy on empty batch");
    }
    for row in probs.rows() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return numerical_err(format!("probabilities sum to {s}, expected 1"));
        }
    }
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return data_err(format!("label {label} out of range for {classes} classes"));
        }
        loss -= probs[[i, label]].max(1e-300).ln();
        grad[[i, label]] -= 1.0;
    }
    let bf = batch as f64;
    grad.mapv_inplace(|v| v / bf);
    Ok((loss / bf, grad))
}
