//! Minimal dense-network engine.
//!
//! A fixed-topology multilayer perceptron in double precision: forward and
//! exact reverse-mode backward passes, reconstruction / sparsity / softmax
//! losses, the Adam optimizer, a finite-difference gradient checker, and a
//! binary checkpoint format. No autodiff graph — the layer chain is the
//! whole model.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::finite_diff_check;
pub use loss::{cross_entropy_loss, kl_sparsity, mse_loss, KL_CLAMP_EPS};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{data_err, numerical_err, Error, Result};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Softmax),
            other => data_err(format!("unknown activation tag {other}")),
        }
    }
}

/// One dense layer: `a = act(x W^T + b)` with `W` stored as `out x in`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Scaled-uniform initialization in ±sqrt(6 / (fan_in + fan_out)).
    pub fn seeded(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        let bias = Array1::zeros(out_dim);
        Layer { weights, bias, activation }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn apply_activation(&self, pre: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Identity => pre.clone(),
            Activation::Relu => pre.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Softmax => softmax_rows(pre),
        }
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Gradients for every weight matrix and bias vector, mirroring model shapes.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        ModelGrads {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }
}

/// Activations cached by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    /// Pre-activation of each layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activation of each layer.
    pub post: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Network output (post-activation of the last layer).
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("model has at least one layer")
    }
}

/// Layered feedforward network.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Validates the dimension chain and that softmax only terminates the net.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return data_err("model must have at least one layer");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return data_err(format!(
                    "layer {} output dim {} does not match layer {} input dim {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                ));
            }
            if pair[0].activation == Activation::Softmax {
                return data_err("softmax is only supported on the final layer");
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return data_err(format!("layer {i} bias length mismatch"));
            }
            if l.weights.iter().any(|v| !v.is_finite()) || l.bias.iter().any(|v| !v.is_finite()) {
                return data_err(format!("layer {i} has non-finite parameters"));
            }
        }
        Ok(MlpModel { layers })
    }

    /// `[input_dim, hidden..., output_dim]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn check_dims(&self, expected: &[usize]) -> Result<()> {
        let dims = self.dims();
        if dims != expected {
            return data_err(format!("model dims {dims:?} do not match expected {expected:?}"));
        }
        Ok(())
    }

    /// Deterministic forward pass caching pre/post activations per layer.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_dim() {
            return data_err(format!(
                "batch width {} does not match model input dim {}",
                batch.ncols(),
                self.input_dim()
            ));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return numerical_err("non-finite value in forward input");
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let z = current.dot(&layer.weights.t()) + &layer.bias;
            let a = layer.apply_activation(&z);
            pre.push(z);
            current = a.clone();
            post.push(a);
        }
        Ok(ForwardCache { input: batch.clone(), pre, post })
    }

    /// Exact reverse-mode gradients for all parameters plus the input batch.
    ///
    /// `out_grad` is the loss gradient w.r.t. the final layer output, except
    /// when the final activation is softmax: there it is interpreted w.r.t.
    /// the pre-softmax logits (the fused softmax/cross-entropy convention,
    /// which is also what the attribution methods need to target a logit).
    pub fn backward(&self, cache: &ForwardCache, out_grad: &Array2<f64>) -> Result<(ModelGrads, Array2<f64>)> {
        self.backward_with_injection(cache, out_grad, &[])
    }

    /// `backward` with extra gradients added to hidden post-activations.
    ///
    /// Each `(layer_idx, grad)` is accumulated into the loss gradient w.r.t.
    /// the post-activation output of `layer_idx` as the sweep passes it; this
    /// is how the sparsity penalty reaches the encoder during pretraining.
    pub fn backward_with_injection(
        &self,
        cache: &ForwardCache,
        out_grad: &Array2<f64>,
        injections: &[(usize, Array2<f64>)],
    ) -> Result<(ModelGrads, Array2<f64>)> {
        let n_layers = self.layers.len();
        if cache.pre.len() != n_layers || cache.post.len() != n_layers {
            return data_err("forward cache does not match model depth");
        }
        if out_grad.dim() != cache.output().dim() {
            return data_err("output gradient shape mismatch");
        }
        for (idx, g) in injections {
            if *idx >= n_layers {
                return data_err(format!("injection layer {idx} out of range"));
            }
            if g.dim() != cache.post[*idx].dim() {
                return data_err(format!("injection gradient shape mismatch at layer {idx}"));
            }
        }
        let mut grads = ModelGrads::zeros_like(self);
        // Gradient w.r.t. the post-activation of the layer being processed.
        let mut g_post = out_grad.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let g_pre = match layer.activation {
                // Fused convention: out_grad already w.r.t. logits.
                Activation::Softmax => g_post,
                Activation::Identity => g_post,
                Activation::Relu => {
                    let mut g = g_post;
                    g.zip_mut_with(&cache.pre[l], |gv, &z| {
                        if z <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    g
                }
            };
            let below = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads.layers[l].0 = g_pre.t().dot(below);
            grads.layers[l].1 = g_pre.sum_axis(Axis(0));
            let mut g_prev = g_pre.dot(&layer.weights);
            if l > 0 {
                for (idx, extra) in injections {
                    if *idx == l - 1 {
                        g_prev += extra;
                    }
                }
            }
            g_post = g_prev;
        }
        Ok((grads, g_post))
    }

    /// FNV-1a hash over the exact parameter bits; used to assert that
    /// read-only consumers leave the model untouched.
    pub fn param_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut absorb = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for layer in &self.layers {
            for v in layer.weights.iter() {
                absorb(*v);
            }
            for v in layer.bias.iter() {
                absorb(*v);
            }
        }
        h
    }
}

/// Hyperparameters for one training phase.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Target mean activation for the sparsity penalty.
    pub sparsity_rho: f64,
    /// Weight of the sparsity penalty (ignored during fine-tuning).
    pub sparsity_beta: f64,
}

impl TrainConfig {
    /// Pretraining defaults: 50 epochs, lr 1e-3, weight decay 1e-4,
    /// batch 128, rho 0.2, beta 2.
    pub fn pretrain_defaults(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 128,
            seed,
            sparsity_rho: 0.2,
            sparsity_beta: 2.0,
        }
    }

    /// Fine-tuning defaults: 50 epochs, lr 1e-4, weight decay 1e-4, batch 128.
    pub fn finetune_defaults(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 128,
            seed,
            sparsity_rho: 0.2,
            sparsity_beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.sparsity_rho > 0.0 && self.sparsity_rho < 1.0) {
            return Err(Error::Config("sparsity rho must be in (0, 1)".into()));
        }
        if self.sparsity_beta < 0.0 {
            return Err(Error::Config("sparsity beta must be >= 0".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be finite and >= 0".into()));
        }
        Ok(())
    }
}
