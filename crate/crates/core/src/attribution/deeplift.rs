//! Contribution backpropagation against a reference input (rescale rule).

use ndarray::{Array1, Array2, Axis};

use crate::error::{data_err, Result};
use crate::nn::{Activation, MlpModel};

/// Threshold below which the activation-difference ratio falls back to the
/// exact derivative at the input.
const RESCALE_EPS: f64 = 1e-7;

/// Rescale-rule attribution of the target-class pre-softmax score.
///
/// Layer multipliers are `delta activation / delta pre-activation` between
/// the input and the reference, chained from the target logit down to the
/// inputs; the attribution is `multiplier * (x - baseline)` and sums to
/// `f_c(x) - f_c(baseline)` exactly (up to the near-zero fallback).
pub fn deep_lift(model: &MlpModel, x: &Array1<f64>, baseline: &Array1<f64>, target: usize) -> Result<Array1<f64>> {
    if baseline.len() != x.len() {
        return data_err("baseline width does not match input");
    }
    if target >= model.output_dim() {
        return data_err(format!("target class {target} out of range"));
    }
    let xb = x.view().insert_axis(Axis(0)).to_owned();
    let bb = baseline.view().insert_axis(Axis(0)).to_owned();
    let cache_x = model.forward(&xb)?;
    let cache_b = model.forward(&bb)?;

    let n_layers = model.layers.len();
    let mut m = Array2::zeros((1, model.output_dim()));
    m[[0, target]] = 1.0;
    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let mz = match layer.activation {
            // The target is the pre-softmax score, so the softmax layer
            // contributes no nonlinearity; identity likewise.
            Activation::Softmax | Activation::Identity => m,
            Activation::Relu => {
                let mut mz = m;
                for (col, mv) in mz.row_mut(0).iter_mut().enumerate() {
                    let zx = cache_x.pre[l][[0, col]];
                    let zb = cache_b.pre[l][[0, col]];
                    let dz = zx - zb;
                    let ratio = if dz.abs() < RESCALE_EPS {
                        if zx > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let ax = cache_x.post[l][[0, col]];
                        let ab = cache_b.post[l][[0, col]];
                        (ax - ab) / dz
                    };
                    *mv *= ratio;
                }
                mz
            }
        };
        m = mz.dot(&layer.weights);
    }
    let multipliers = m.remove_axis(Axis(0));
    Ok(&multipliers * &(x - baseline))
}

/// Mean of `deep_lift` over a background of reference inputs.
pub fn deep_lift_shap(model: &MlpModel, x: &Array1<f64>, background: &Array2<f64>, target: usize) -> Result<Array1<f64>> {
    if background.nrows() == 0 {
        return data_err("deep_lift_shap needs a non-empty background");
    }
    let mut acc = Array1::zeros(x.len());
    for b in background.rows() {
        acc += &deep_lift(model, x, &b.to_owned(), target)?;
    }
    Ok(acc / background.nrows() as f64)
}
