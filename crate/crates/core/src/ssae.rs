//! Stacked sparse autoencoder: greedy layer-wise pretraining and supervised
//! fine-tuning of the encoder stack plus a softmax head.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{data_err, Error, Result};
use crate::ingest::Label;
use crate::nn::{
    adam_step, cross_entropy_loss, kl_sparsity, mse_loss, AdamState, Activation, Layer, MlpModel,
    TrainConfig,
};
use crate::seed::derive_seed;

/// One autoencoder layer: relu encoder, linear decoder, untied weights.
#[derive(Debug, Clone, Copy)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Trained autoencoder; the decoder is only used during pretraining.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Layer,
    pub decoder: Layer,
}

/// One row of a training trace.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Per-epoch records across phases.
#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn extend(&mut self, other: TrainingTrace) {
        self.records.extend(other.records);
    }

    /// Export as `phase,epoch,train_loss,val_loss,val_acc` (validation
    /// columns empty during pretraining).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "phase,epoch,train_loss,val_loss,val_acc")?;
        for r in &self.records {
            let val_loss = r.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
            let val_acc = r.val_acc.map(|v| format!("{v:.9}")).unwrap_or_default();
            writeln!(w, "{},{},{:.9},{},{}", r.phase, r.epoch, r.train_loss, val_loss, val_acc)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train one sparse autoencoder on unlabeled vectors.
///
/// Loss per batch is reconstruction MSE plus `beta` times the Bernoulli KL
/// between the target sparsity and the batch-mean hidden activation; the
/// sparsity gradient is injected at the hidden layer during backprop.
pub fn pretrain_layer(
    spec: AutoencoderSpec,
    data: &Array2<f64>,
    cfg: &TrainConfig,
    phase: &str,
) -> Result<(Autoencoder, TrainingTrace)> {
    cfg.validate()?;
    if data.nrows() == 0 {
        return data_err("pretraining data is empty");
    }
    if data.ncols() != spec.input_dim {
        return data_err(format!(
            "pretraining data width {} does not match input_dim {}",
            data.ncols(),
            spec.input_dim
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::new(vec![
        Layer::seeded(spec.hidden_dim, spec.input_dim, Activation::Relu, &mut rng),
        Layer::seeded(spec.input_dim, spec.hidden_dim, Activation::Identity, &mut rng),
    ])?;
    let mut adam = AdamState::new(&model);
    let mut trace = TrainingTrace::default();

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in epoch_batches(data.nrows(), cfg.batch_size, &mut rng) {
            let xb = data.select(Axis(0), &batch_idx);
            let cache = model.forward(&xb)?;
            let hidden = &cache.post[0];
            let (mse, gx) = mse_loss(cache.output(), &xb)?;
            let rho_hat = hidden.mean_axis(Axis(0)).expect("non-empty batch");
            let (kl, gkl) = kl_sparsity(cfg.sparsity_rho, &rho_hat)?;
            let loss = mse + cfg.sparsity_beta * kl;

            // d(beta * KL)/d(hidden_ij) = beta * gkl_j / batch.
            let scale = cfg.sparsity_beta / batch_idx.len() as f64;
            let inject = Array2::from_shape_fn(hidden.dim(), |(_, j)| scale * gkl[j]);
            let (grads, _) = model.backward_with_injection(&cache, &gx, &[(0, inject)])?;
            adam_step(&mut adam, &mut model, &grads, cfg.learning_rate, cfg.weight_decay)?;

            epoch_loss += loss * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        let train_loss = epoch_loss / seen as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite pretraining loss at epoch {epoch}")));
        }
        trace.records.push(TraceRecord {
            phase: phase.to_string(),
            epoch,
            train_loss,
            val_loss: None,
            val_acc: None,
        });
    }
    let mut layers = model.layers.into_iter();
    let encoder = layers.next().expect("two layers");
    let decoder = layers.next().expect("two layers");
    Ok((Autoencoder { encoder, decoder }, trace))
}

/// Encode a matrix through one relu encoder layer.
fn encode(layer: &Layer, data: &Array2<f64>) -> Array2<f64> {
    let z = data.dot(&layer.weights.t()) + &layer.bias;
    z.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Greedy layer-wise pretraining.
///
/// `dims` chains input through each hidden size (e.g. `[1000, 500, 100]`):
/// the first autoencoder trains on the raw features, each subsequent one on
/// the previous encoder's codes. Decoders are discarded; the returned stack
/// is the ordered list of trained encoder layers.
pub fn greedy_pretrain(dims: &[usize], data: &Array2<f64>, cfg: &TrainConfig) -> Result<(Vec<Layer>, TrainingTrace)> {
    if dims.len() < 2 {
        return Err(Error::Config(format!("need at least [input, hidden] dims, got {dims:?}")));
    }
    let mut stack = Vec::with_capacity(dims.len() - 1);
    let mut trace = TrainingTrace::default();
    let mut current = data.clone();
    for (ae_idx, pair) in dims.windows(2).enumerate() {
        let spec = AutoencoderSpec { input_dim: pair[0], hidden_dim: pair[1] };
        let layer_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, "pretrain-ae", ae_idx as u64),
            ..cfg.clone()
        };
        let phase = format!("pretrain_ae{}", ae_idx + 1);
        let (ae, layer_trace) = pretrain_layer(spec, &current, &layer_cfg, &phase)?;
        current = encode(&ae.encoder, &current);
        stack.push(ae.encoder);
        trace.extend(layer_trace);
    }
    Ok((stack, trace))
}

/// Attach a fresh softmax head and fine-tune the whole chain with
/// cross-entropy. Returns the classifier and a trace with per-epoch
/// validation loss/accuracy.
pub fn fine_tune(
    stack: Vec<Layer>,
    train: (&Array2<f64>, &[Label]),
    val: (&Array2<f64>, &[Label]),
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainingTrace)> {
    cfg.validate()?;
    let (x_train, y_train) = train;
    let (x_val, y_val) = val;
    if x_train.nrows() == 0 {
        return data_err("fine-tuning training split is empty");
    }
    if y_train.len() != x_train.nrows() || y_val.len() != x_val.nrows() {
        return data_err("label count does not match sample count");
    }
    let has = |labels: &[Label], l: Label| labels.iter().any(|&v| v == l);
    if !has(y_train, Label::Asd) || !has(y_train, Label::Tc) {
        return data_err("fine-tuning training split has a single class");
    }
    let code_dim = stack.last().map(Layer::out_dim).ok_or_else(|| Error::Config("empty encoder stack".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = Layer::seeded(2, code_dim, Activation::Softmax, &mut rng);
    let mut layers = stack;
    layers.push(head);
    let mut model = MlpModel::new(layers)?;
    let mut adam = AdamState::new(&model);
    let mut trace = TrainingTrace::default();
    let train_labels: Vec<usize> = y_train.iter().map(|l| l.index()).collect();
    let val_labels: Vec<usize> = y_val.iter().map(|l| l.index()).collect();

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in epoch_batches(x_train.nrows(), cfg.batch_size, &mut rng) {
            let xb = x_train.select(Axis(0), &batch_idx);
            let yb: Vec<usize> = batch_idx.iter().map(|&i| train_labels[i]).collect();
            let cache = model.forward(&xb)?;
            let (loss, glogits) = cross_entropy_loss(cache.output(), &yb)?;
            let (grads, _) = model.backward(&cache, &glogits)?;
            adam_step(&mut adam, &mut model, &grads, cfg.learning_rate, cfg.weight_decay)?;
            epoch_loss += loss * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        let train_loss = epoch_loss / seen as f64;
        let (val_loss, val_acc) = if x_val.nrows() > 0 {
            let cache = model.forward(x_val)?;
            let (vl, _) = cross_entropy_loss(cache.output(), &val_labels)?;
            let preds = argmax_labels(cache.output());
            let correct = preds.iter().zip(y_val).filter(|(p, t)| *p == *t).count();
            (Some(vl), Some(correct as f64 / x_val.nrows() as f64))
        } else {
            (None, None)
        };
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite fine-tuning loss at epoch {epoch}")));
        }
        trace.records.push(TraceRecord {
            phase: "fine_tune".into(),
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
    }
    Ok((model, trace))
}

/// Argmax with exact ties resolving to class 0 (TC).
fn argmax_labels(probs: &Array2<f64>) -> Vec<Label> {
    probs
        .rows()
        .into_iter()
        .map(|row| if row[1] > row[0] { Label::Asd } else { Label::Tc })
        .collect()
}

/// Classify one reduced feature vector: label and `[p_tc, p_asd]`.
pub fn predict(model: &MlpModel, fv: &Array1<f64>) -> Result<(Label, [f64; 2])> {
    if fv.len() != model.input_dim() {
        return data_err(format!(
            "input width {} does not match model input dim {}",
            fv.len(),
            model.input_dim()
        ));
    }
    let batch = fv.view().insert_axis(Axis(0)).to_owned();
    let cache = model.forward(&batch)?;
    let out = cache.output();
    if out.ncols() != 2 {
        return data_err(format!("classifier has {} outputs, expected 2", out.ncols()));
    }
    let probs = [out[[0, 0]], out[[0, 1]]];
    let label = if probs[1] > probs[0] { Label::Asd } else { Label::Tc };
    Ok((label, probs))
}

/// Classify each row of a matrix.
pub fn predict_batch(model: &MlpModel, x: &Array2<f64>) -> Result<Vec<Label>> {
    let cache = model.forward(x)?;
    Ok(argmax_labels(cache.output()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_data(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(0.2..1.2))
    }

    #[test]
    fn pretrain_defaults_match_contract() {
        let cfg = TrainConfig::pretrain_defaults(1);
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.sparsity_rho, 0.2);
        assert_eq!(cfg.sparsity_beta, 2.0);
        let ft = TrainConfig::finetune_defaults(1);
        assert_eq!(ft.epochs, 50);
        assert_eq!(ft.learning_rate, 1e-4);
    }

    #[test]
    fn overcomplete_autoencoder_reconstructs_without_sparsity() {
        let data = toy_data(64, 6, 2);
        // Seed chosen so no relu unit starts dead; at width 6 an unlucky
        // init can strand a unit with negative pre-activations everywhere.
        let cfg = TrainConfig {
            epochs: 2000,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            batch_size: 16,
            seed: 5,
            sparsity_rho: 0.2,
            sparsity_beta: 0.0,
        };
        let spec = AutoencoderSpec { input_dim: 6, hidden_dim: 6 };
        let (ae, trace) = pretrain_layer(spec, &data, &cfg, "pretrain").unwrap();
        let final_loss = trace.records.last().unwrap().train_loss;
        assert!(final_loss < 1e-3, "final loss {final_loss}");
        assert!(trace.records[0].train_loss >= final_loss);
        assert_eq!(ae.decoder.out_dim(), 6);
    }

    #[test]
    fn sparsity_penalty_pulls_mean_activation_toward_target() {
        let data = toy_data(128, 12, 4);
        let rho = 0.2;
        let measure = |encoder: &Layer| -> f64 {
            let h = encode(encoder, &data);
            let m = h.mean_axis(Axis(0)).unwrap();
            let clamped = m.mapv(|v| v.clamp(1e-6, 1.0 - 1e-6));
            clamped.mean().unwrap()
        };
        let spec = AutoencoderSpec { input_dim: 12, hidden_dim: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init_encoder = Layer::seeded(8, 12, Activation::Relu, &mut rng);
        let before = measure(&init_encoder);
        let cfg = TrainConfig {
            epochs: 150,
            learning_rate: 3e-3,
            batch_size: 128,
            seed: 9,
            sparsity_beta: 2.0,
            sparsity_rho: rho,
            weight_decay: 0.0,
        };
        let (ae, _) = pretrain_layer(spec, &data, &cfg, "pretrain").unwrap();
        let after = measure(&ae.encoder);
        assert!(
            (after - rho).abs() < (before - rho).abs(),
            "mean activation moved {before} -> {after}, target {rho}"
        );
    }

    #[test]
    fn greedy_stack_dims_chain_and_composition_is_exact() {
        let data = toy_data(40, 20, 5);
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::pretrain_defaults(7) };
        let (stack, trace) = greedy_pretrain(&[20, 10, 4], &data, &cfg).unwrap();
        assert_eq!(stack.len(), 2);
        assert_eq!(stack[0].in_dim(), 20);
        assert_eq!(stack[0].out_dim(), 10);
        assert_eq!(stack[1].in_dim(), 10);
        assert_eq!(stack[1].out_dim(), 4);
        assert!(trace.records.iter().any(|r| r.phase == "pretrain_ae1"));
        assert!(trace.records.iter().any(|r| r.phase == "pretrain_ae2"));
        assert!(trace.records.iter().all(|r| r.val_loss.is_none()));

        // stack(x) == enc2(enc1(x)) exactly, via an identity-headed model.
        let model = MlpModel::new(stack.clone().into_iter().collect()).unwrap();
        let out_model = model.forward(&data).unwrap().output().clone();
        let manual = encode(&stack[1], &encode(&stack[0], &data));
        assert_eq!(out_model, manual);
        assert_eq!(out_model.ncols(), 4);
    }

    #[test]
    fn greedy_pretrain_is_bit_reproducible() {
        let data = toy_data(30, 16, 6);
        let cfg = TrainConfig { epochs: 4, ..TrainConfig::pretrain_defaults(11) };
        let (a, _) = greedy_pretrain(&[16, 8, 4], &data, &cfg).unwrap();
        let (b, _) = greedy_pretrain(&[16, 8, 4], &data, &cfg).unwrap();
        for (la, lb) in a.iter().zip(b.iter()) {
            assert_eq!(la.weights, lb.weights);
            assert_eq!(la.bias, lb.bias);
        }
    }

    fn labeled_toy(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Tc } else { Label::Asd };
            for j in 0..d {
                x[[i, j]] = rng.random_range(-0.5..0.5) + label.signum() * 0.4 * ((j % 3) as f64 * 0.5);
            }
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn fine_tune_updates_encoders_and_learns() {
        let (x, y) = labeled_toy(80, 16, 8);
        let pre_cfg = TrainConfig { epochs: 5, ..TrainConfig::pretrain_defaults(13) };
        let (stack, _) = greedy_pretrain(&[16, 8, 4], &x, &pre_cfg).unwrap();
        let stack_checksums: Vec<u64> = stack
            .iter()
            .map(|l| MlpModel::new(vec![l.clone()]).unwrap().param_checksum())
            .collect();
        let ft_cfg = TrainConfig {
            epochs: 120,
            learning_rate: 3e-3,
            ..TrainConfig::finetune_defaults(13)
        };
        let (model, trace) = fine_tune(stack.clone(), (&x, &y), (&x, &y), &ft_cfg).unwrap();
        // Encoder weights changed during fine-tuning.
        for (i, orig) in stack_checksums.iter().enumerate() {
            let after = MlpModel::new(vec![model.layers[i].clone()]).unwrap().param_checksum();
            assert_ne!(*orig, after, "encoder layer {i} untouched");
        }
        let last = trace.records.last().unwrap();
        assert!(last.val_acc.unwrap() > 0.9, "val acc {:?}", last.val_acc);
        assert!(trace.records.iter().all(|r| r.phase == "fine_tune"));
    }

    #[test]
    fn fine_tune_with_zero_lr_keeps_encoders() {
        let (x, y) = labeled_toy(20, 10, 14);
        let pre_cfg = TrainConfig { epochs: 2, ..TrainConfig::pretrain_defaults(15) };
        let (stack, _) = greedy_pretrain(&[10, 6, 3], &x, &pre_cfg).unwrap();
        let before: Vec<_> = stack.iter().map(|l| l.weights.clone()).collect();
        let ft_cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::finetune_defaults(15)
        };
        let (model, _) = fine_tune(stack, (&x, &y), (&x, &y), &ft_cfg).unwrap();
        for (i, orig) in before.iter().enumerate() {
            assert_eq!(&model.layers[i].weights, orig);
        }
    }

    #[test]
    fn fine_tune_rejects_single_class() {
        let (x, _) = labeled_toy(10, 6, 1);
        let y = vec![Label::Tc; 10];
        let pre_cfg = TrainConfig { epochs: 1, ..TrainConfig::pretrain_defaults(1) };
        let (stack, _) = greedy_pretrain(&[6, 4, 2], &x, &pre_cfg).unwrap();
        assert!(fine_tune(stack, (&x, &y), (&x, &y), &TrainConfig::finetune_defaults(1)).is_err());
    }

    #[test]
    fn predict_probabilities_and_tie_rule() {
        let (x, y) = labeled_toy(40, 8, 21);
        let pre_cfg = TrainConfig { epochs: 3, ..TrainConfig::pretrain_defaults(2) };
        let (stack, _) = greedy_pretrain(&[8, 5, 3], &x, &pre_cfg).unwrap();
        let (model, _) = fine_tune(stack, (&x, &y), (&x, &y), &TrainConfig::finetune_defaults(2)).unwrap();
        let row = x.row(0).to_owned();
        let (label, probs) = predict(&model, &row).unwrap();
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
        let (label2, probs2) = predict(&model, &row).unwrap();
        assert_eq!(label, label2);
        assert_eq!(probs, probs2);
        assert!(predict(&model, &Array1::zeros(9)).is_err());

        // Exact tie resolves to TC (class index 0).
        let tie_model = MlpModel::new(vec![Layer {
            weights: Array2::zeros((2, 3)),
            bias: Array1::zeros(2),
            activation: Activation::Softmax,
        }])
        .unwrap();
        let (label, probs) = predict(&tie_model, &Array1::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(probs[0], probs[1]);
        assert_eq!(label, Label::Tc);
    }

    #[test]
    fn trace_csv_has_empty_val_columns_for_pretraining() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut trace = TrainingTrace::default();
        trace.records.push(TraceRecord {
            phase: "pretrain_ae1".into(),
            epoch: 0,
            train_loss: 0.5,
            val_loss: None,
            val_acc: None,
        });
        trace.records.push(TraceRecord {
            phase: "fine_tune".into(),
            epoch: 0,
            train_loss: 0.4,
            val_loss: Some(0.45),
            val_acc: Some(0.8),
        });
        trace.write_csv(&path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines[0], "phase,epoch,train_loss,val_loss,val_acc");
        assert!(lines[1].ends_with(",,"));
        assert!(lines[2].contains("0.450000000"));
    }
}
