//! Gradient-path attribution: integrated gradients, gradient-based Shapley
//! sampling, and guided backpropagation.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, data_err, Result};
use crate::nn::{Activation, MlpModel};

/// Gradient of the target-class pre-softmax score w.r.t. each input row.
///
/// Rows are independent, so one batched backward pass yields per-row input
/// gradients. `targets` gives the class whose logit is differentiated, per
/// row.
pub fn logit_gradients(model: &MlpModel, batch: &Array2<f64>, targets: &[usize]) -> Result<Array2<f64>> {
    if targets.len() != batch.nrows() {
        return data_err("one target class per row required");
    }
    let classes = model.output_dim();
    let cache = model.forward(batch)?;
    let mut out_grad = Array2::zeros((batch.nrows(), classes));
    for (i, &c) in targets.iter().enumerate() {
        if c >= classes {
            return data_err(format!("target class {c} out of range"));
        }
        // With a softmax final layer, backward treats this as d/d(logits);
        // with a linear head it is d/d(outputs). Either way it selects the
        // pre-softmax score of class c.
        out_grad[[i, c]] = 1.0;
    }
    let (_, input_grad) = model.backward(&cache, &out_grad)?;
    Ok(input_grad)
}

/// Integrated gradients with the midpoint rule.
///
/// `(x - b) * mean over m steps of grad f_c(b + (i - 0.5)/m * (x - b))`.
pub fn integrated_gradients(
    model: &MlpModel,
    x: &Array1<f64>,
    baseline: &Array1<f64>,
    target: usize,
    steps: usize,
) -> Result<Array1<f64>> {
    if steps < 1 {
        return config_err("integrated gradients needs steps >= 1");
    }
    if baseline.len() != x.len() {
        return data_err("baseline width does not match input");
    }
    let d = x.len();
    let diff = x - baseline;
    let mut points = Array2::zeros((steps, d));
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        for j in 0..d {
            points[[s, j]] = baseline[j] + alpha * diff[j];
        }
    }
    let grads = logit_gradients(model, &points, &vec![target; steps])?;
    let mean = grads.mean_axis(Axis(0)).expect("steps >= 1");
    Ok(&mean * &diff)
}

/// Gradient-based Shapley sampling: average of
/// `(x - b) * grad f_c(b + u (x - b) + eta)` over drawn baselines `b`,
/// uniform interpolation points `u`, and Gaussian noise `eta` with the
/// given per-feature scale.
pub fn gradient_shap(
    model: &MlpModel,
    x: &Array1<f64>,
    background: &Array2<f64>,
    target: usize,
    n_samples: usize,
    sigma: &Array1<f64>,
    seed: u64,
) -> Result<Array1<f64>> {
    if background.nrows() == 0 {
        return data_err("gradient_shap needs a non-empty background");
    }
    if n_samples < 1 {
        return config_err("gradient_shap needs n_samples >= 1");
    }
    if sigma.len() != x.len() || background.ncols() != x.len() {
        return data_err("gradient_shap width mismatch");
    }
    let d = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((n_samples, d));
    let mut diffs = Array2::zeros((n_samples, d));
    for s in 0..n_samples {
        let b = background.row(rng.random_range(0..background.nrows()));
        let u: f64 = rng.random::<f64>();
        for j in 0..d {
            let eta: f64 = rng.sample(StandardNormal);
            let diff = x[j] - b[j];
            diffs[[s, j]] = diff;
            points[[s, j]] = b[j] + u * diff + sigma[j] * eta;
        }
    }
    let grads = logit_gradients(model, &points, &vec![target; n_samples])?;
    let weighted = &grads * &diffs;
    Ok(weighted.mean_axis(Axis(0)).expect("n_samples >= 1"))
}

/// Guided backpropagation: a backward pass where, at every relu, the
/// propagated gradient is zeroed when the forward activation was <= 0 or
/// the incoming gradient is negative. Layers without relu pass gradients
/// through unchanged, so on a purely linear model this is the plain
/// gradient of the target logit.
pub fn guided_backprop(model: &MlpModel, x: &Array1<f64>, target: usize) -> Result<Array1<f64>> {
    if target >= model.output_dim() {
        return data_err(format!("target class {target} out of range"));
    }
    let batch = x.view().insert_axis(Axis(0)).to_owned();
    let cache = model.forward(&batch)?;
    let n_layers = model.layers.len();
    let mut g = Array2::zeros((1, model.output_dim()));
    g[[0, target]] = 1.0;
    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let gz = match layer.activation {
            // Pre-softmax target: the softmax itself is skipped.
            Activation::Softmax | Activation::Identity => g,
            Activation::Relu => {
                let mut gz = g;
                gz.zip_mut_with(&cache.pre[l], |gv, &z| {
                    if z <= 0.0 || *gv < 0.0 {
                        *gv = 0.0;
                    }
                });
                gz
            }
        };
        g = gz.dot(&layer.weights);
    }
    Ok(g.remove_axis(Axis(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use ndarray::array;

    /// Two-logit linear model: logit_c = w_c . x + b_c.
    fn linear_model(w0: Vec<f64>, w1: Vec<f64>) -> MlpModel {
        let d = w0.len();
        let mut weights = Array2::zeros((2, d));
        for (j, v) in w0.iter().enumerate() {
            weights[[0, j]] = *v;
        }
        for (j, v) in w1.iter().enumerate() {
            weights[[1, j]] = *v;
        }
        MlpModel::new(vec![Layer { weights, bias: array![0.1, -0.2], activation: Activation::Softmax }])
            .unwrap()
    }

    #[test]
    fn ig_zero_path_gives_zeros() {
        let model = linear_model(vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 0.3]);
        let x = array![0.4, -0.7, 0.2];
        let attr = integrated_gradients(&model, &x, &x, 0, 8).unwrap();
        assert!(attr.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn ig_is_exact_on_linear_models_for_any_steps() {
        let w = vec![1.5, -0.4, 0.9];
        let model = linear_model(w.clone(), vec![0.0, 0.0, 0.0]);
        let x = array![0.5, 1.0, -2.0];
        let baseline = Array1::zeros(3);
        for steps in [1, 7, 64] {
            let attr = integrated_gradients(&model, &x, &baseline, 0, steps).unwrap();
            for j in 0..3 {
                assert!((attr[j] - w[j] * x[j]).abs() < 1e-12, "steps={steps}");
            }
        }
    }

    #[test]
    fn gradient_shap_linear_no_noise_single_baseline_is_exact() {
        let w = vec![0.8, -1.2];
        let model = linear_model(w.clone(), vec![0.0, 0.0]);
        let x = array![1.0, 0.5];
        let b = array![[0.2, -0.3]];
        let sigma = Array1::zeros(2);
        let attr = gradient_shap(&model, &x, &b, 0, 5, &sigma, 3).unwrap();
        for j in 0..2 {
            assert!((attr[j] - w[j] * (x[j] - b[[0, j]])).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_shap_is_seed_deterministic() {
        let model = linear_model(vec![0.8, -1.2], vec![0.1, 0.1]);
        let x = array![1.0, 0.5];
        let b = array![[0.2, -0.3], [0.0, 0.0]];
        let sigma = array![0.05, 0.05];
        let a = gradient_shap(&model, &x, &b, 0, 32, &sigma, 11).unwrap();
        let bb = gradient_shap(&model, &x, &b, 0, 32, &sigma, 11).unwrap();
        assert_eq!(a, bb);
        let c = gradient_shap(&model, &x, &b, 0, 32, &sigma, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn guided_backprop_equals_plain_gradient_without_relu() {
        let model = linear_model(vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]);
        let x = array![0.3, 0.6, -0.1];
        let guided = guided_backprop(&model, &x, 0).unwrap();
        let plain = logit_gradients(&model, &x.view().insert_axis(Axis(0)).to_owned(), &[0]).unwrap();
        for j in 0..3 {
            assert!((guided[j] - plain[[0, j]]).abs() < 1e-15);
        }
    }

    #[test]
    fn guided_backprop_gating_only_zeroes_after_single_relu() {
        // One relu layer followed by a fixed linear readout of unit weight:
        // guided equals plain with negative-path entries zeroed.
        let weights = array![[1.0, -1.0], [2.0, 0.5], [-0.5, 0.25]];
        let model = MlpModel::new(vec![
            Layer { weights: weights.clone(), bias: array![0.0, 0.0, 0.0], activation: Activation::Relu },
            Layer { weights: array![[1.0, -2.0, 1.5]], bias: array![0.0], activation: Activation::Identity },
        ])
        .unwrap();
        let x = array![1.0, 0.5];
        let guided = guided_backprop(&model, &x, 0).unwrap();
        // Forward relu pre-activations: [0.5, 2.25, -0.375] -> unit 2 inactive.
        // Incoming gradients at relu outputs: [1, -2, 1.5] -> unit 1 gated (negative).
        // Surviving: unit 0 with gradient 1 -> input grad = 1 * w_row0.
        assert!((guided[0] - 1.0).abs() < 1e-15);
        assert!((guided[1] - -1.0).abs() < 1e-15);
    }

    #[test]
    fn guided_backprop_smoke_on_relu_stack() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = MlpModel::new(vec![
            Layer::seeded(16, 10, Activation::Relu, &mut rng),
            Layer::seeded(8, 16, Activation::Relu, &mut rng),
            Layer::seeded(2, 8, Activation::Softmax, &mut rng),
        ])
        .unwrap();
        let x = Array1::from_shape_fn(10, |_| rng.random_range(-1.0..1.0));
        let a = guided_backprop(&model, &x, 1).unwrap();
        let b = guided_backprop(&model, &x, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
