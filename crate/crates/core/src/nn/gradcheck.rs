//! Finite-difference verification of analytic gradients.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MlpModel, ModelGrads};
use crate::error::Result;

/// Check analytic parameter gradients against central finite differences.
///
/// `loss` must return the scalar loss and its analytic gradients for a model
/// and batch; the same closure evaluated at perturbed parameters provides the
/// finite-difference side. At least `samples_per_layer` coordinates are
/// sampled per layer (weights and bias pooled), seeded for reproducibility.
///
/// Returns the maximum relative error `|fd - an| / max(|fd|, |an|)`; when
/// both magnitudes are below 1e-6 the absolute difference is used instead,
/// so vanishing gradients do not inflate the ratio with roundoff noise.
pub fn finite_diff_check<F>(
    model: &MlpModel,
    batch: &Array2<f64>,
    loss: F,
    h: f64,
    samples_per_layer: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&MlpModel, &Array2<f64>) -> Result<(f64, ModelGrads)>,
{
    let (_, analytic) = loss(model, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;

    for layer_idx in 0..model.layers.len() {
        let n_w = model.layers[layer_idx].weights.len();
        let n_b = model.layers[layer_idx].bias.len();
        let total = n_w + n_b;
        let n_samples = samples_per_layer.min(total);
        for _ in 0..n_samples {
            let flat = rng.random_range(0..total);
            let mut plus = model.clone();
            let mut minus = model.clone();
            let an = if flat < n_w {
                let (r, c) = (flat / model.layers[layer_idx].weights.ncols(), flat % model.layers[layer_idx].weights.ncols());
                plus.layers[layer_idx].weights[[r, c]] += h;
                minus.layers[layer_idx].weights[[r, c]] -= h;
                analytic.layers[layer_idx].0[[r, c]]
            } else {
                let b = flat - n_w;
                plus.layers[layer_idx].bias[b] += h;
                minus.layers[layer_idx].bias[b] -= h;
                analytic.layers[layer_idx].1[b]
            };
            let fd = (loss(&plus, batch)?.0 - loss(&minus, batch)?.0) / (2.0 * h);
            let denom = fd.abs().max(an.abs());
            let err = if denom < 1e-6 { (fd - an).abs() } else { (fd - an).abs() / denom };
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy_loss, mse_loss, Activation, Layer};

    fn ce_loss(labels: Vec<usize>) -> impl Fn(&MlpModel, &Array2<f64>) -> Result<(f64, ModelGrads)> {
        move |m: &MlpModel, x: &Array2<f64>| {
            let cache = m.forward(x)?;
            let (loss, glogits) = cross_entropy_loss(cache.output(), &labels)?;
            let (grads, _) = m.backward(&cache, &glogits)?;
            Ok((loss, grads))
        }
    }

    #[test]
    fn linear_model_error_at_rounding_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MlpModel::new(vec![Layer::seeded(3, 5, Activation::Identity, &mut rng)]).unwrap();
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let loss = move |m: &MlpModel, x: &Array2<f64>| {
            let cache = m.forward(x)?;
            let (l, g) = mse_loss(cache.output(), &target)?;
            let (grads, _) = m.backward(&cache, &g)?;
            Ok((l, grads))
        };
        let err = finite_diff_check(&model, &x, loss, 1e-5, 50, 0).unwrap();
        assert!(err < 1e-9, "err={err}");
    }

    #[test]
    fn relu_softmax_net_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = MlpModel::new(vec![
            Layer::seeded(10, 6, Activation::Relu, &mut rng),
            Layer::seeded(4, 10, Activation::Relu, &mut rng),
            Layer::seeded(2, 4, Activation::Softmax, &mut rng),
        ])
        .unwrap();
        let x = Array2::from_shape_fn((8, 6), |_| rng.random_range(-1.0..1.0));
        let labels = vec![0usize, 1, 0, 1, 1, 0, 0, 1];
        let err = finite_diff_check(&model, &x, ce_loss(labels), 1e-5, 200, 1).unwrap();
        assert!(err < 1e-5, "err={err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = MlpModel::new(vec![
            Layer::seeded(6, 4, Activation::Relu, &mut rng),
            Layer::seeded(2, 6, Activation::Softmax, &mut rng),
        ])
        .unwrap();
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let labels = vec![0usize, 1, 1, 0, 1];
        let corrupted = move |m: &MlpModel, x: &Array2<f64>| {
            let cache = m.forward(x)?;
            let (loss, glogits) = cross_entropy_loss(cache.output(), &labels)?;
            let (mut grads, _) = m.backward(&cache, &glogits)?;
            for (gw, gb) in &mut grads.layers {
                gw.mapv_inplace(|v| v * 1.1);
                gb.mapv_inplace(|v| v * 1.1);
            }
            Ok((loss, grads))
        };
        let err = finite_diff_check(&model, &x, corrupted, 1e-5, 200, 2).unwrap();
        assert!(err > 0.05, "err={err}");
    }
}
