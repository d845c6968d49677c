//! Local surrogate explanation: weighted ridge regression of masked
//! predictions on binary feature masks.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, data_err, numerical_err, Result};
use crate::linalg::solve_spd;
use crate::nn::MlpModel;

/// Weighted ridge fit with an unpenalized intercept.
///
/// `masks` is draws x features (0/1), `values` the model output per draw,
/// `weights` the kernel weight per draw. Returns the feature coefficients
/// (the intercept is discarded).
pub fn fit_weighted_ridge(
    masks: &Array2<f64>,
    values: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<Array1<f64>> {
    let (n, d) = masks.dim();
    if values.len() != n || weights.len() != n {
        return data_err("masks, values, and weights disagree on draw count");
    }
    if lambda <= 0.0 {
        return config_err("ridge lambda must be > 0");
    }
    // Augmented design [1 | masks] with sqrt-weight scaled rows; normal
    // equations form as one matmul, with the intercept unpenalized.
    let p = d + 1;
    let mut design = Array2::zeros((n, p));
    let mut target = Array1::zeros(n);
    for i in 0..n {
        let sw = weights[i].max(0.0).sqrt();
        design[[i, 0]] = sw;
        for j in 0..d {
            design[[i, j + 1]] = sw * masks[[i, j]];
        }
        target[i] = sw * values[i];
    }
    let mut xtwx = design.t().dot(&design);
    let xtwy = design.t().dot(&target);
    for j in 1..p {
        xtwx[[j, j]] += lambda;
    }
    let beta = solve_spd(&xtwx, &xtwy)?;
    Ok(beta.slice(ndarray::s![1..]).to_owned())
}

/// Local surrogate attribution of the target-class probability.
///
/// Binary masks keep each feature with probability 0.5; absent features are
/// set to 0 (the uninformative value). Draws are weighted by
/// `exp(-d^2 / width^2)` where `d` is the masked fraction, and a weighted
/// ridge regression of the probabilities on the masks yields the
/// coefficients.
#[allow(clippy::too_many_arguments)]
pub fn lime(
    model: &MlpModel,
    x: &Array1<f64>,
    target: usize,
    n_samples: usize,
    kernel_width: f64,
    lambda: f64,
    seed: u64,
) -> Result<Array1<f64>> {
    if n_samples < 10 {
        return config_err("lime needs at least 10 samples");
    }
    let d = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Array2::zeros((n_samples, d));
    let mut perturbed = Array2::zeros((n_samples, d));
    let mut weights = vec![0.0; n_samples];
    for s in 0..n_samples {
        let mut masked = 0usize;
        for j in 0..d {
            if rng.random::<bool>() {
                masks[[s, j]] = 1.0;
                perturbed[[s, j]] = x[j];
            } else {
                masked += 1;
            }
        }
        let dist = masked as f64 / d as f64;
        weights[s] = (-(dist * dist) / (kernel_width * kernel_width)).exp();
    }
    let first = masks.row(0);
    if (1..n_samples).all(|s| masks.row(s) == first) {
        return numerical_err("degenerate mask draws: all perturbations identical");
    }
    let cache = model.forward(&perturbed)?;
    let probs = cache.output();
    if target >= probs.ncols() {
        return data_err(format!("target class {target} out of range"));
    }
    let values: Vec<f64> = probs.column(target).iter().copied().collect();
    fit_weighted_ridge(&masks, &values, &weights, lambda)
}
