//! Adam optimizer with bias correction and L2 weight decay.

use ndarray::{Array1, Array2};

use super::{MlpModel, ModelGrads};
use crate::error::{data_err, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring the model's parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros = |m: &MlpModel| {
            m.layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect::<Vec<_>>()
        };
        AdamState { m: zeros(model), v: zeros(model), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place on the model.
///
/// Weight decay enters as an L2 gradient term `g + wd * theta` before the
/// moment updates (classic Adam-with-L2, not decoupled decay).
pub fn adam_step(
    state: &mut AdamState,
    model: &mut MlpModel,
    grads: &ModelGrads,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.layers.len() != model.layers.len() {
        return data_err("gradient layer count does not match model");
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);

    for (idx, layer) in model.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[idx];
        if gw.dim() != layer.weights.dim() || gb.len() != layer.bias.len() {
            return data_err(format!("gradient shape mismatch at layer {idx}"));
        }
        let (mw, mb) = &mut state.m[idx];
        let (vw, vb) = &mut state.v[idx];

        update_tensor(
            layer.weights.as_slice_mut().expect("contiguous"),
            gw.as_slice().expect("contiguous"),
            mw.as_slice_mut().expect("contiguous"),
            vw.as_slice_mut().expect("contiguous"),
            learning_rate,
            weight_decay,
            bc1,
            bc2,
        );
        update_tensor(
            layer.bias.as_slice_mut().expect("contiguous"),
            gb.as_slice().expect("contiguous"),
            mb.as_slice_mut().expect("contiguous"),
            vb.as_slice_mut().expect("contiguous"),
            learning_rate,
            weight_decay,
            bc1,
            bc2,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    wd: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i] + wd * theta[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_param_model(w: f64) -> MlpModel {
        MlpModel::new(vec![Layer {
            weights: array![[w]],
            bias: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn grads_of(g: f64) -> ModelGrads {
        ModelGrads { layers: vec![(array![[g]], array![0.0])] }
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut model = one_param_model(0.7);
        let mut state = AdamState::new(&model);
        adam_step(&mut state, &mut model, &grads_of(0.0), 0.001, 0.0).unwrap();
        assert_eq!(model.layers[0].weights[[0, 0]], 0.7);
    }

    #[test]
    fn first_step_matches_bias_corrected_formula() {
        // Frozen from the update at t=1 with g=1: delta = -lr / (1 + eps).
        let mut model = one_param_model(0.0);
        let mut state = AdamState::new(&model);
        adam_step(&mut state, &mut model, &grads_of(1.0), 0.001, 0.0).unwrap();
        let expected = -0.001 * 1.0 / (1.0 + ADAM_EPS);
        assert!((model.layers[0].weights[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_calls_from_identical_states_match() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut model = MlpModel::new(vec![Layer::seeded(3, 2, Activation::Identity, &mut rng)]).unwrap();
            let mut state = AdamState::new(&model);
            let grads = ModelGrads {
                layers: vec![(Array2::from_elem((3, 2), 0.3), Array1::from_elem(3, -0.1))],
            };
            for _ in 0..5 {
                adam_step(&mut state, &mut model, &grads, 0.01, 1e-4).unwrap();
            }
            model.param_checksum()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lr_zero_is_identity_on_parameters() {
        let mut model = one_param_model(1.3);
        let mut state = AdamState::new(&model);
        adam_step(&mut state, &mut model, &grads_of(5.0), 0.0, 1e-4).unwrap();
        assert_eq!(model.layers[0].weights[[0, 0]], 1.3);
    }

    #[test]
    fn weight_decay_shrinks_norm_on_zero_data_gradient() {
        let mut model = one_param_model(2.0);
        let mut state = AdamState::new(&model);
        adam_step(&mut state, &mut model, &grads_of(0.0), 0.01, 1e-4).unwrap();
        let w = model.layers[0].weights[[0, 0]];
        assert!(w.abs() < 2.0 && w > 0.0);
    }
}
