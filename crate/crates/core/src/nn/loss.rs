//! Loss functions and their gradients.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the logs.
pub const BCE_EPS: f64 = 1e-7;

/// Summed binary cross-entropy over a label vector:
/// `L = -Σ_i [y_i log ŷ_i + (1 - y_i) log(1 - ŷ_i)]`.
///
/// Returns the loss and its gradient in `yhat`
/// (`∂L/∂ŷ_i = -y_i/ŷ_i + (1-y_i)/(1-ŷ_i)`, evaluated at the clamped value).
pub fn binary_cross_entropy(y: &[f64], yhat: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y.len() != yhat.len() {
        return Err(Error::dimension(format!(
            "bce length mismatch: {} labels vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (&yi, &pi) in y.iter().zip(yhat) {
        let p = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= yi * p.ln() + (1.0 - yi) * (1.0 - p).ln();
        grad.push(-yi / p + (1.0 - yi) / (1.0 - p));
    }
    Ok((loss, grad))
}

/// Batched BCE: rows are samples. The loss is the per-sample label sum
/// averaged over the batch; the gradient matches that scaling.
pub fn bce_batch(y: &Array2<f64>, yhat: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if y.dim() != yhat.dim() {
        return Err(Error::dimension(format!(
            "bce shape mismatch: {:?} vs {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    let batch = y.nrows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(y.dim());
    ndarray::Zip::from(&mut grad)
        .and(y)
        .and(yhat)
        .for_each(|g, &yi, &pi| {
            let p = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= yi * p.ln() + (1.0 - yi) * (1.0 - p).ln();
            *g = (-yi / p + (1.0 - yi) / (1.0 - p)) / batch;
        });
    Ok((loss / batch, grad))
}

/// Mean squared error over equally shaped matrices, with gradient
/// `2 (xhat - x) / N` where `N` is the element count.
pub fn mean_squared_error(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if x.dim() != xhat.dim() {
        return Err(Error::dimension(format!(
            "mse shape mismatch: {:?} vs {:?}",
            x.dim(),
            xhat.dim()
        )));
    }
    let n = x.len().max(1) as f64;
    let diff = xhat - x;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    Ok((loss, grad))
}

/// MSE over flat slices.
pub fn mse_flat(x: &[f64], xhat: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != xhat.len() {
        return Err(Error::dimension(format!(
            "mse length mismatch: {} vs {}",
            x.len(),
            xhat.len()
        )));
    }
    let n = x.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(xhat) {
        let d = b - a;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, grad))
}
