//! Command implementations over the pipeline library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use fcexplain::attribution::{
    attribute_batch, random_ranking, rank_features, read_attribution_scores, read_ranking,
    write_attribution_scores, write_ranking, AttributionConfig, FeatureRanking, Method,
};
use fcexplain::connectome::featurize_subjects;
use fcexplain::error::{Error, Result};
use fcexplain::evaluation::{
    run_cv, stratified_kfold, FoldSplit, PipelineConfig, SelectionScope,
};
use fcexplain::ingest::{
    filter_by_fd, generate_synthetic, load_dataset, load_manifest, read_planted_edges,
    write_synthetic, FeatureDataset, SynthConfig, SynthMode,
};
use fcexplain::nn::{
    finite_diff_check, load_checkpoint, save_checkpoint, Activation, Layer, MlpModel, TrainConfig,
};
use fcexplain::roar::{emit_roar_table, oracle_ranking, roar_run, RoarConfig};
use fcexplain::roi_report::{emit_roi_report, roi_importance, BrodmannMap};
use fcexplain::seed::derive_seed;
use fcexplain::ssae::predict_batch;
use fcexplain::svm_rfe::{read_selection, write_selection, SelectedFeatures, SvmHyper};

use crate::config::Cfg;

pub fn cmd_synth(cfg: &Cfg, out_dir: &Path) -> Result<()> {
    let synth = SynthConfig {
        n_subjects: cfg.get_usize("synth", "subjects")?,
        n_planted_edges: cfg.get_usize("synth", "planted")?,
        effect_size: cfg.get_f64("synth", "effect")?,
        timepoints: cfg.get_usize("synth", "timepoints")?,
        high_fd_fraction: cfg.get_f64("synth", "high_fd_fraction")?,
        noise_scale: cfg.get_f64("synth", "noise_scale")?,
        mode: SynthMode::parse(cfg.require("synth", "mode")?)?,
        seed: cfg.get_u64("synth", "seed")?,
    };
    let (subjects, truth) = generate_synthetic(&synth)?;
    write_synthetic(out_dir, &subjects, &truth)?;
    cfg.write(&out_dir.join("synth_config.txt"))?;
    println!(
        "wrote {} subjects ({} planted edges) to {}",
        subjects.len(),
        truth.edge_indices.len(),
        out_dir.display()
    );
    Ok(())
}

/// Load a manifest-backed dataset, apply FD filtering per config, and
/// convert to the feature matrix.
fn load_features(cfg: &Cfg) -> Result<FeatureDataset> {
    let data_path = PathBuf::from(cfg.require("train", "data")?);
    let manifest = load_manifest(&data_path)?;
    let subjects = load_dataset(&manifest)?;
    let n_loaded = subjects.len();
    let subjects = if cfg.get_bool("train", "fd_filter")? {
        let threshold = cfg.get_f64("train", "fd_threshold")?;
        let (kept, removed) = filter_by_fd(subjects, threshold)?;
        if removed > 0 {
            eprintln!("fd filter: removed {removed} of {n_loaded} samples (mean FD > {threshold} mm)");
        }
        if kept.is_empty() {
            eprintln!("warning: fd filter removed every sample");
        }
        kept
    } else {
        subjects
    };
    let (data, warnings) = featurize_subjects(&subjects)?;
    for (row, roi) in warnings {
        eprintln!(
            "warning: subject {} ROI {roi} has zero variance; its edges were set to 0",
            data.subject_ids[row]
        );
    }
    Ok(data)
}

fn pipeline_config(cfg: &Cfg) -> Result<PipelineConfig> {
    let base_seed = cfg.get_u64("train", "seed")?;
    Ok(PipelineConfig {
        k: cfg.get_usize("train", "k")?,
        val_fraction: cfg.get_f64("train", "val_fraction")?,
        target_features: cfg.get_usize("train", "target_features")?,
        selection_scope: SelectionScope::parse(cfg.require("train", "selection_scope")?)?,
        dims: cfg.get_usize_list("train", "dims")?,
        svm: SvmHyper {
            c: cfg.get_f64("train", "svm_c")?,
            epochs: cfg.get_usize("train", "svm_epochs")?,
            learning_rate: cfg.get_f64("train", "svm_lr")?,
            seed: 0, // per-fold seeds are derived inside run_cv
        },
        pretrain: TrainConfig {
            epochs: cfg.get_usize("train", "pre_epochs")?,
            learning_rate: cfg.get_f64("train", "pre_lr")?,
            weight_decay: cfg.get_f64("train", "weight_decay")?,
            batch_size: cfg.get_usize("train", "batch_size")?,
            seed: 0,
            sparsity_rho: cfg.get_f64("train", "rho")?,
            sparsity_beta: cfg.get_f64("train", "beta")?,
        },
        finetune: TrainConfig {
            epochs: cfg.get_usize("train", "ft_epochs")?,
            learning_rate: cfg.get_f64("train", "ft_lr")?,
            weight_decay: cfg.get_f64("train", "weight_decay")?,
            batch_size: cfg.get_usize("train", "batch_size")?,
            seed: 0,
            sparsity_rho: cfg.get_f64("train", "rho")?,
            sparsity_beta: 0.0,
        },
        base_seed,
    })
}

pub fn cmd_train(cfg: &Cfg, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_features(cfg)?;
    let pipeline = pipeline_config(cfg)?;
    let outcome = run_cv(&data, &pipeline)?;

    cfg.write(&out_dir.join("config.txt"))?;
    outcome.write_metrics_csv(&out_dir.join("metrics.csv"))?;
    for fold in &outcome.folds {
        write_selection(
            &out_dir.join(format!("selection_fold{}.txt", fold.fold)),
            &fold.selection,
            pipeline.target_features,
            pipeline.base_seed,
        )?;
        let meta = format!(
            "fold={}\nseed={}\ndims={}\n",
            fold.fold,
            pipeline.base_seed,
            pipeline
                .dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        save_checkpoint(&fold.model, &meta, &out_dir.join(format!("model_fold{}.ssae", fold.fold)))?;
        fold.trace.write_csv(&out_dir.join(format!("trace_fold{}.csv", fold.fold)))?;
    }
    let acc = outcome.aggregate_of(|m| Some(m.accuracy));
    println!(
        "trained {} folds; mean accuracy {:.4} (std {:.4}); artifacts in {}",
        outcome.folds.len(),
        acc.mean.unwrap_or(f64::NAN),
        acc.std.unwrap_or(f64::NAN),
        out_dir.display()
    );
    Ok(())
}

/// Re-derive the fold split and reduced feature matrix of a finished run.
struct RunContext {
    data: FeatureDataset,
    split: FoldSplit,
    selection: SelectedFeatures,
    reduced: Array2<f64>,
    model: MlpModel,
    base_seed: u64,
}

fn load_run(run_dir: &Path, cfg: &Cfg, fold: usize) -> Result<RunContext> {
    let data = load_features(cfg)?;
    let pipeline = pipeline_config(cfg)?;
    let split = stratified_kfold(
        &data.y,
        pipeline.k,
        pipeline.val_fraction,
        derive_seed(pipeline.base_seed, "folds", 0),
    )?;
    if fold >= split.folds.len() {
        return Err(Error::Config(format!("fold {fold} out of range (k = {})", split.folds.len())));
    }
    let selection = read_selection(&run_dir.join(format!("selection_fold{fold}.txt")))?;
    selection.validate_partition(data.n_features())?;
    let (model, _) = load_checkpoint(&run_dir.join(format!("model_fold{fold}.ssae")))?;
    model.check_dims(
        &pipeline
            .dims
            .iter()
            .copied()
            .chain(std::iter::once(2))
            .collect::<Vec<_>>(),
    )?;
    let reduced = fcexplain::svm_rfe::apply_selection_matrix(&data.x, &selection)?;
    Ok(RunContext {
        data,
        split,
        selection,
        reduced,
        model,
        base_seed: pipeline.base_seed,
    })
}

fn parse_methods(raw: &str) -> Result<Vec<Method>> {
    raw.split(',')
        .map(|tok| Method::parse(tok.trim()))
        .collect()
}

pub fn cmd_attribute(cfg: &Cfg, run_dir: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let fold = cfg.get_usize("attribute", "fold")?;
    let ctx = load_run(run_dir, cfg, fold)?;
    let methods = parse_methods(cfg.require("attribute", "methods")?)?;
    let attr_cfg = AttributionConfig {
        ig_steps: cfg.get_usize("attribute", "ig_steps")?,
        background_size: cfg.get_usize("attribute", "background_size")?,
        gradient_shap_samples: cfg.get_usize("attribute", "gradient_shap_samples")?,
        gradient_shap_noise: cfg.get_f64("attribute", "gradient_shap_noise")?,
        lime_samples: cfg.get_usize("attribute", "lime_samples")?,
        lime_kernel_width: cfg.get_f64("attribute", "lime_kernel_width")?,
        ridge_lambda: cfg.get_f64("attribute", "ridge_lambda")?,
        kernel_shap_coalitions: cfg.get_usize("attribute", "kernel_shap_coalitions")?,
        seed: derive_seed(ctx.base_seed, "attribute", fold as u64),
    };
    let train_rows = ctx.reduced.select(ndarray::Axis(0), &ctx.split.folds[fold].train);

    let checksum_before = ctx.model.param_checksum();
    for method in &methods {
        let ranking = match method {
            Method::Random => random_ranking(ctx.reduced.ncols(), derive_seed(attr_cfg.seed, "random", 0))?,
            Method::Oracle => {
                return Err(Error::Config(
                    "oracle rankings are produced by the roar command via --planted".into(),
                ))
            }
            _ => {
                let attr = attribute_batch(&ctx.model, &train_rows, *method, &attr_cfg, &train_rows)?;
                let ranking = rank_features(&attr);
                write_attribution_scores(
                    &out_dir.join(format!("attribution_{}.csv", method.tag())),
                    &ranking,
                    &ctx.selection.kept,
                )?;
                ranking
            }
        };
        write_ranking(
            &out_dir.join(format!("ranking_{}.txt", method.tag())),
            &ranking,
            attr_cfg.seed,
        )?;
        println!("wrote ranking_{}.txt", method.tag());
    }
    assert_eq!(checksum_before, ctx.model.param_checksum());
    cfg.write(&out_dir.join("attribute_config.txt"))?;
    Ok(())
}

pub fn cmd_roar(cfg: &Cfg, run_dir: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let fold = cfg.get_usize("roar", "ranking_fold")?;
    let ctx = load_run(run_dir, cfg, fold)?;
    let methods = parse_methods(cfg.require("roar", "methods")?)?;
    let rankings_dir = PathBuf::from(cfg.require("roar", "rankings")?);

    let mut rankings: BTreeMap<Method, FeatureRanking> = BTreeMap::new();
    for method in &methods {
        let ranking = match method {
            Method::Oracle => {
                let planted_path = PathBuf::from(cfg.require("roar", "planted")?);
                let truth = read_planted_edges(&planted_path)?;
                oracle_ranking(&truth, &ctx.selection)
            }
            Method::Random => random_ranking(
                ctx.reduced.ncols(),
                derive_seed(ctx.base_seed, "roar-random", fold as u64),
            )?,
            _ => {
                let path = rankings_dir.join(format!("ranking_{}.txt", method.tag()));
                let ranking = read_ranking(&path)?;
                if ranking.method != *method {
                    return Err(Error::Data(format!(
                        "{}: header method '{}' does not match requested '{}'",
                        path.display(),
                        ranking.method.tag(),
                        method.tag()
                    )));
                }
                ranking
            }
        };
        rankings.insert(*method, ranking);
    }

    let roar_cfg = RoarConfig {
        thresholds: cfg.get_f64_list("roar", "thresholds")?,
        methods,
        pretrain: TrainConfig {
            epochs: cfg.get_usize("roar", "pre_epochs")?,
            learning_rate: cfg.get_f64("train", "pre_lr")?,
            weight_decay: cfg.get_f64("train", "weight_decay")?,
            batch_size: cfg.get_usize("train", "batch_size")?,
            seed: 0,
            sparsity_rho: cfg.get_f64("train", "rho")?,
            sparsity_beta: cfg.get_f64("train", "beta")?,
        },
        finetune: TrainConfig {
            epochs: cfg.get_usize("roar", "ft_epochs")?,
            learning_rate: cfg.get_f64("train", "ft_lr")?,
            weight_decay: cfg.get_f64("train", "weight_decay")?,
            batch_size: cfg.get_usize("train", "batch_size")?,
            seed: 0,
            sparsity_rho: cfg.get_f64("train", "rho")?,
            sparsity_beta: 0.0,
        },
        dims: cfg.get_usize_list("train", "dims")?,
        folds: cfg.get_usize_list("roar", "folds")?,
        base_seed: ctx.base_seed,
    };
    let curves = roar_run(&ctx.reduced, &ctx.data.y, &ctx.split, &rankings, &roar_cfg)?;
    emit_roar_table(&curves, &out_dir.join("roar_curves.csv"), &out_dir.join("roar_curves.svg"))?;
    cfg.write(&out_dir.join("roar_config.txt"))?;
    for curve in &curves {
        let auc = curve.auc_up_to(0.1, curve.points.first().map(|p| p.mean_accuracy).unwrap_or(1.0));
        println!("{}: auc(t<=0.1) = {auc:.4}", curve.method.tag());
    }
    println!("wrote roar_curves.csv and roar_curves.svg to {}", out_dir.display());
    Ok(())
}

pub fn cmd_report(cfg: &Cfg, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let ranking_path = PathBuf::from(cfg.require("report", "ranking")?);
    let scores_path = PathBuf::from(cfg.require("report", "scores")?);
    let top_fraction = cfg.get_f64("report", "top_fraction")?;

    let ranking_file = read_ranking(&ranking_path)?;
    let (mapping, scores) = read_attribution_scores(&scores_path)?;
    if scores.len() != ranking_file.order.len() {
        return Err(Error::Data(format!(
            "ranking covers {} features but scores file has {}",
            ranking_file.order.len(),
            scores.len()
        )));
    }
    let ranking = FeatureRanking {
        method: ranking_file.method,
        order: ranking_file.order,
        scores,
    };
    let importance = roi_importance(&ranking, &mapping, top_fraction)?;
    emit_roi_report(
        &importance,
        &BrodmannMap::bundled(),
        &out_dir.join("roi_report.csv"),
        &out_dir.join("roi_nodes.csv"),
    )?;
    cfg.write(&out_dir.join("report_config.txt"))?;
    println!(
        "wrote roi_report.csv ({} top connections) to {}",
        importance.n_top_connections,
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_check_grad(cfg: &Cfg) -> Result<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let dims = cfg.get_usize_list("check_grad", "dims")?;
    let batch_size = cfg.get_usize("check_grad", "batch")?;
    let h = cfg.get_f64("check_grad", "h")?;
    let samples = cfg.get_usize("check_grad", "samples")?;
    let seed = cfg.get_u64("check_grad", "seed")?;
    if dims.len() < 2 {
        return Err(Error::Config("check-grad needs at least [input, output] dims".into()));
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        let activation = if i + 2 == dims.len() { Activation::Softmax } else { Activation::Relu };
        layers.push(Layer::seeded(pair[1], pair[0], activation, &mut rng));
    }
    let model = MlpModel::new(layers)?;
    let batch = Array2::from_shape_fn((batch_size, dims[0]), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..dims[dims.len() - 1])).collect();

    let loss = move |m: &MlpModel, x: &Array2<f64>| {
        let cache = m.forward(x)?;
        let (loss, glogits) = fcexplain::nn::cross_entropy_loss(cache.output(), &labels)?;
        let (grads, _) = m.backward(&cache, &glogits)?;
        Ok((loss, grads))
    };
    let err = finite_diff_check(&model, &batch, loss, h, samples, derive_seed(seed, "gradcheck", 0))?;
    println!(
        "max relative gradient error over >= {samples} coordinates per layer (h = {h:e}): {err:.3e}"
    );
    Ok(err)
}

/// Classify held-out rows with a trained fold model; used by tests and
/// exposed for scripting via `train` artifacts.
#[allow(dead_code)]
pub fn score_fold(run_dir: &Path, cfg: &Cfg, fold: usize) -> Result<f64> {
    let ctx = load_run(run_dir, cfg, fold)?;
    let test_rows = ctx.reduced.select(ndarray::Axis(0), &ctx.split.folds[fold].test);
    let preds = predict_batch(&ctx.model, &test_rows)?;
    let truth: Vec<_> = ctx.split.folds[fold].test.iter().map(|&i| ctx.data.y[i]).collect();
    let correct = preds.iter().zip(truth.iter()).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}
