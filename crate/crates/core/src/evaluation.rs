//! Stratified k-fold orchestration and classification metrics.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{config_err, data_err, Result};
use crate::ingest::{FeatureDataset, Label};
use crate::nn::{MlpModel, TrainConfig};
use crate::seed::derive_seed;
use crate::ssae::{fine_tune, greedy_pretrain, predict_batch, TrainingTrace};
use crate::svm_rfe::{apply_selection_matrix, rfe_rank, SelectedFeatures, SvmHyper};

/// One fold's disjoint index sets.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// All folds; test sets partition the dataset.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

/// Stratified k-fold assignment.
///
/// Per class, indices are shuffled (seeded) and dealt round-robin into k
/// test folds, keeping each fold's class ratio within one sample of the
/// global ratio. Within each fold's non-test portion, `val_fraction` is
/// carved out per class (floor). Index lists are sorted ascending.
pub fn stratified_kfold(labels: &[Label], k: usize, val_fraction: f64, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return config_err(format!("k = {k}: need k >= 2 for a held-out rotation"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return config_err(format!("val_fraction {val_fraction} must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, label) in labels.iter().enumerate() {
        per_class[label.index()].push(i);
    }
    for (c, members) in per_class.iter().enumerate() {
        if members.len() < k {
            return config_err(format!(
                "class {} has {} samples, need at least k = {k}",
                Label::from_index(c)?.as_str(),
                members.len()
            ));
        }
    }
    for members in per_class.iter_mut() {
        members.shuffle(&mut rng);
    }

    let mut folds = Vec::with_capacity(k);
    for fold_idx in 0..k {
        let mut test = Vec::new();
        let mut val = Vec::new();
        let mut train = Vec::new();
        for members in &per_class {
            let class_test: Vec<usize> = members
                .iter()
                .enumerate()
                .filter_map(|(pos, &idx)| (pos % k == fold_idx).then_some(idx))
                .collect();
            let class_rest: Vec<usize> = members
                .iter()
                .enumerate()
                .filter_map(|(pos, &idx)| (pos % k != fold_idx).then_some(idx))
                .collect();
            let n_val = (val_fraction * class_rest.len() as f64).floor() as usize;
            val.extend_from_slice(&class_rest[..n_val]);
            train.extend_from_slice(&class_rest[n_val..]);
            test.extend(class_test);
        }
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, val, test });
    }
    Ok(FoldSplit { folds })
}

/// Marker for a metric whose denominator was zero.
pub type MaybeMetric = Option<f64>;

/// Confusion counts and derived metrics, ASD positive.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: MaybeMetric,
    pub specificity: MaybeMetric,
    pub precision: MaybeMetric,
    pub f1: MaybeMetric,
}

/// Compute the metric suite from aligned predictions and truth.
/// Any 0/0 metric is reported as `None` and excluded from averages.
pub fn compute_metrics(predictions: &[Label], truth: &[Label]) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return data_err(format!(
            "{} predictions for {} truth labels",
            predictions.len(),
            truth.len()
        ));
    }
    if predictions.is_empty() {
        return data_err("cannot compute metrics on an empty set");
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truth.iter()) {
        match (p, t) {
            (Label::Asd, Label::Asd) => tp += 1,
            (Label::Asd, Label::Tc) => fp += 1,
            (Label::Tc, Label::Tc) => tn += 1,
            (Label::Tc, Label::Asd) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| -> MaybeMetric {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let n = predictions.len() as f64;
    let sensitivity = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / n,
        sensitivity,
        specificity: ratio(tn, tn + fp),
        precision,
        f1,
    })
}

/// Where feature selection is fitted: on each fold's training split, or
/// once on the whole dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionScope {
    PerFold,
    Global,
}

impl SelectionScope {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "per_fold" => Ok(SelectionScope::PerFold),
            "global" => Ok(SelectionScope::Global),
            other => config_err(format!("unknown selection scope '{other}' (per_fold|global)")),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionScope::PerFold => "per_fold",
            SelectionScope::Global => "global",
        }
    }
}

/// Everything the cross-validated pipeline needs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub k: usize,
    pub val_fraction: f64,
    pub target_features: usize,
    pub selection_scope: SelectionScope,
    /// Network dims from model input to code, e.g. `[1000, 500, 100]`.
    pub dims: Vec<usize>,
    pub svm: SvmHyper,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub base_seed: u64,
}

impl PipelineConfig {
    pub fn defaults(base_seed: u64) -> Self {
        PipelineConfig {
            k: 5,
            val_fraction: 0.1,
            target_features: 1000,
            selection_scope: SelectionScope::PerFold,
            dims: vec![1000, 500, 100],
            svm: SvmHyper::default(),
            pretrain: TrainConfig::pretrain_defaults(0),
            finetune: TrainConfig::finetune_defaults(0),
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return config_err("dims must chain input through at least one hidden layer");
        }
        if self.dims[0] != self.target_features {
            return config_err(format!(
                "model input dim {} must equal target_features {}",
                self.dims[0], self.target_features
            ));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        Ok(())
    }
}

/// One fold's artifacts.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub selection: SelectedFeatures,
    pub model: MlpModel,
    pub trace: TrainingTrace,
    pub metrics: Metrics,
}

/// Mean and population standard deviation of the defined fold values.
#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Folds where the metric was undefined (0/0) and excluded.
    pub undefined_folds: usize,
}

fn aggregate(values: impl Iterator<Item = MaybeMetric>) -> Aggregate {
    let all: Vec<MaybeMetric> = values.collect();
    let defined: Vec<f64> = all.iter().filter_map(|v| *v).collect();
    let undefined_folds = all.len() - defined.len();
    if defined.is_empty() {
        return Aggregate { mean: None, std: None, undefined_folds };
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate { mean: Some(mean), std: Some(var.sqrt()), undefined_folds }
}

/// Cross-validation result: per-fold outcomes plus aggregates.
#[derive(Debug)]
pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub split: FoldSplit,
}

impl CvOutcome {
    pub fn mean_accuracy(&self) -> f64 {
        self.folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / self.folds.len() as f64
    }

    pub fn aggregate_of<F>(&self, metric: F) -> Aggregate
    where
        F: Fn(&Metrics) -> MaybeMetric,
    {
        aggregate(self.folds.iter().map(|f| metric(&f.metrics)))
    }

    /// Write `fold,accuracy,sensitivity,specificity,precision,f1` rows plus
    /// a `mean`/`std` pair.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let fmt = |v: MaybeMetric| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "fold,accuracy,sensitivity,specificity,precision,f1")?;
        for f in &self.folds {
            writeln!(
                w,
                "{},{:.6},{},{},{},{}",
                f.fold,
                f.metrics.accuracy,
                fmt(f.metrics.sensitivity),
                fmt(f.metrics.specificity),
                fmt(f.metrics.precision),
                fmt(f.metrics.f1)
            )?;
        }
        let agg = |get: fn(&Metrics) -> MaybeMetric| self.aggregate_of(get);
        let acc = self.aggregate_of(|m| Some(m.accuracy));
        let sens = agg(|m| m.sensitivity);
        let spec = agg(|m| m.specificity);
        let prec = agg(|m| m.precision);
        let f1 = agg(|m| m.f1);
        writeln!(
            w,
            "mean,{},{},{},{},{}",
            fmt(acc.mean),
            fmt(sens.mean),
            fmt(spec.mean),
            fmt(prec.mean),
            fmt(f1.mean)
        )?;
        writeln!(
            w,
            "std,{},{},{},{},{}",
            fmt(acc.std),
            fmt(sens.std),
            fmt(spec.std),
            fmt(prec.std),
            fmt(f1.std)
        )?;
        w.flush()?;
        Ok(())
    }
}

/// Run one fold of the pipeline: feature selection on the training split,
/// greedy pretraining, fine-tuning, evaluation on the test split.
pub fn run_single_fold(
    data: &FeatureDataset,
    fold_idx: usize,
    fold: &Fold,
    cfg: &PipelineConfig,
) -> Result<FoldOutcome> {
    run_fold(data, fold_idx, fold, cfg, None)
}

fn run_fold(
    data: &FeatureDataset,
    fold_idx: usize,
    fold: &Fold,
    cfg: &PipelineConfig,
    global_selection: Option<&SelectedFeatures>,
) -> Result<FoldOutcome> {
    let fold_seed = cfg.base_seed.wrapping_add(fold_idx as u64);
    let selection = match global_selection {
        Some(sel) => sel.clone(),
        None => {
            let (x_train, y_train) = data.rows(&fold.train);
            let y_pm: Vec<f64> = y_train.iter().map(|l| l.signum()).collect();
            let hyper = SvmHyper { seed: derive_seed(fold_seed, "svm-rfe", 0), ..cfg.svm.clone() };
            rfe_rank(&x_train, &y_pm, cfg.target_features, &hyper)?
        }
    };

    let reduced = apply_selection_matrix(&data.x, &selection)?;
    let gather = |idx: &[usize]| reduced.select(ndarray::Axis(0), idx);
    let x_train = gather(&fold.train);
    let x_val = gather(&fold.val);
    let x_test = gather(&fold.test);
    let y_of = |idx: &[usize]| -> Vec<Label> { idx.iter().map(|&i| data.y[i]).collect() };
    let y_train = y_of(&fold.train);
    let y_val = y_of(&fold.val);
    let y_test = y_of(&fold.test);

    let pre_cfg = TrainConfig { seed: derive_seed(fold_seed, "pretrain", 0), ..cfg.pretrain.clone() };
    let (stack, mut trace) = greedy_pretrain(&cfg.dims, &x_train, &pre_cfg)?;

    let ft_cfg = TrainConfig { seed: derive_seed(fold_seed, "finetune", 0), ..cfg.finetune.clone() };
    let (model, ft_trace) = fine_tune(stack, (&x_train, &y_train), (&x_val, &y_val), &ft_cfg)?;
    trace.extend(ft_trace);

    let predictions = predict_batch(&model, &x_test)?;
    let metrics = compute_metrics(&predictions, &y_test)?;
    Ok(FoldOutcome { fold: fold_idx, selection, model, trace, metrics })
}

/// Full stratified cross-validation of the pipeline. Folds run in parallel;
/// fold `i` derives every stochastic stage from `base_seed + i`, so outputs
/// are identical regardless of worker count.
pub fn run_cv(data: &FeatureDataset, cfg: &PipelineConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    if data.n_features() <= cfg.target_features {
        return config_err(format!(
            "dataset has {} features; selection target {} must be smaller",
            data.n_features(),
            cfg.target_features
        ));
    }
    let split = stratified_kfold(&data.y, cfg.k, cfg.val_fraction, derive_seed(cfg.base_seed, "folds", 0))?;
    let global_selection = match cfg.selection_scope {
        SelectionScope::Global => {
            let y_pm: Vec<f64> = data.y.iter().map(|l| l.signum()).collect();
            let hyper = SvmHyper { seed: derive_seed(cfg.base_seed, "svm-rfe-global", 0), ..cfg.svm.clone() };
            Some(rfe_rank(&data.x, &y_pm, cfg.target_features, &hyper)?)
        }
        SelectionScope::PerFold => None,
    };
    let folds: Result<Vec<FoldOutcome>> = split
        .folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| run_fold(data, i, fold, cfg, global_selection.as_ref()))
        .collect();
    Ok(CvOutcome { folds: folds?, split })
}

/// Train/evaluate on an explicit, already-reduced matrix (used by the
/// retrain benchmark where selection must not be re-run).
pub fn train_and_score_reduced(
    x: &Array2<f64>,
    y: &[Label],
    fold: &Fold,
    dims: &[usize],
    pretrain: &TrainConfig,
    finetune: &TrainConfig,
) -> Result<f64> {
    let gather = |idx: &[usize]| x.select(ndarray::Axis(0), idx);
    let y_of = |idx: &[usize]| -> Vec<Label> { idx.iter().map(|&i| y[i]).collect() };
    let x_train = gather(&fold.train);
    let (stack, _) = greedy_pretrain(dims, &x_train, pretrain)?;
    let (model, _) = fine_tune(
        stack,
        (&x_train, &y_of(&fold.train)),
        (&gather(&fold.val), &y_of(&fold.val)),
        finetune,
    )?;
    let predictions = predict_batch(&model, &gather(&fold.test))?;
    let truth = y_of(&fold.test);
    let correct = predictions.iter().zip(truth.iter()).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}
