//! Integration tests exercising the pipeline stages together on synthetic
//! data with known ground truth.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fcexplain::attribution::{
    attribute_batch, gradient_shap, integrated_gradients, rank_features, AttributionConfig, Method,
};
use fcexplain::connectome::{featurize_subjects, N_EDGES, N_ROIS};
use fcexplain::evaluation::{run_single_fold, stratified_kfold, FoldOutcome, PipelineConfig};
use fcexplain::ingest::{
    constructed_covariance, generate_synthetic, FeatureDataset, Label, PlantedTruth, SubjectData,
    SynthConfig, SynthMode,
};
use fcexplain::nn::{Activation, Layer, MlpModel, TrainConfig};
use fcexplain::roar::{mask_features, roar_run, RoarConfig};
use fcexplain::svm_rfe::SvmHyper;

/// Shared mid-size planted dataset plus one trained fold.
struct Fixture {
    data: FeatureDataset,
    truth: PlantedTruth,
    fold0: FoldOutcome,
    reduced: Array2<f64>,
    train_rows: Vec<usize>,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let synth = SynthConfig {
            n_subjects: 160,
            n_planted_edges: 40,
            effect_size: 0.5,
            seed: 42,
            ..SynthConfig::default()
        };
        let (subjects, truth) = generate_synthetic(&synth).unwrap();
        let (data, _) = featurize_subjects(&subjects).unwrap();
        let mut cfg = PipelineConfig::defaults(42);
        cfg.pretrain.epochs = 20;
        cfg.pretrain.batch_size = 32;
        cfg.finetune.epochs = 60;
        cfg.finetune.learning_rate = 1e-3;
        cfg.finetune.batch_size = 32;
        cfg.svm.epochs = 30;
        let split = stratified_kfold(
            &data.y,
            cfg.k,
            cfg.val_fraction,
            fcexplain::seed::derive_seed(cfg.base_seed, "folds", 0),
        )
        .unwrap();
        let fold0 = run_single_fold(&data, 0, &split.folds[0], &cfg).unwrap();
        let reduced = fcexplain::svm_rfe::apply_selection_matrix(&data.x, &fold0.selection).unwrap();
        Fixture { data, truth, fold0, reduced, train_rows: split.folds[0].train.clone() }
    })
}

#[test]
fn trained_fold_is_accurate_on_planted_data() {
    let fx = fixture();
    assert!(
        fx.fold0.metrics.accuracy >= 0.9,
        "fold-0 accuracy {}",
        fx.fold0.metrics.accuracy
    );
    // Training learned: selection keeps most planted edges.
    let kept_planted = fx.fold0.selection.kept.iter().filter(|&&k| fx.truth.contains(k)).count();
    assert!(kept_planted >= 36, "selection kept {kept_planted}/40 planted edges");

    // The trace records both phases; validation accuracy ends high and the
    // pretraining loss went down.
    let records = &fx.fold0.trace.records;
    let final_val = records
        .iter()
        .rev()
        .find_map(|r| r.val_acc)
        .expect("fine-tune recorded validation accuracy");
    assert!(final_val >= 0.9, "final validation accuracy {final_val}");
    for phase in ["pretrain_ae1", "pretrain_ae2", "fine_tune"] {
        let of_phase: Vec<_> = records.iter().filter(|r| r.phase == phase).collect();
        assert!(!of_phase.is_empty(), "missing phase {phase}");
        assert!(of_phase.last().unwrap().train_loss <= of_phase.first().unwrap().train_loss + 1e-9);
    }
}

#[test]
fn ig_ranks_planted_features_above_noise() {
    let fx = fixture();
    let train = fx.reduced.select(Axis(0), &fx.train_rows);
    let cfg = AttributionConfig { ig_steps: 64, seed: 7, ..AttributionConfig::default() };
    let attr = attribute_batch(&fx.fold0.model, &train, Method::IntegratedGradients, &cfg, &train).unwrap();
    let ranking = rank_features(&attr);
    ranking.validate_permutation().unwrap();

    // Mean rank of planted (reduced) features must beat the rest.
    let planted_reduced: Vec<usize> = fx
        .fold0
        .selection
        .kept
        .iter()
        .enumerate()
        .filter_map(|(reduced, &orig)| fx.truth.contains(orig).then_some(reduced))
        .collect();
    let mut rank_of = vec![0usize; ranking.order.len()];
    for (pos, &feature) in ranking.order.iter().enumerate() {
        rank_of[feature] = pos;
    }
    let planted_set: std::collections::HashSet<usize> = planted_reduced.iter().copied().collect();
    let mean = |idx: &[usize]| idx.iter().map(|&i| rank_of[i] as f64).sum::<f64>() / idx.len() as f64;
    let rest: Vec<usize> = (0..ranking.order.len()).filter(|i| !planted_set.contains(i)).collect();
    let planted_mean = mean(&planted_reduced);
    let rest_mean = mean(&rest);
    assert!(
        planted_mean < rest_mean,
        "planted mean rank {planted_mean} vs rest {rest_mean}"
    );
}

#[test]
fn attribution_never_mutates_the_model() {
    let fx = fixture();
    let train = fx.reduced.select(Axis(0), &fx.train_rows);
    let sample = train.slice(ndarray::s![..4, ..]).to_owned();
    let before = fx.fold0.model.param_checksum();
    let cfg = AttributionConfig {
        ig_steps: 8,
        lime_samples: 50,
        kernel_shap_coalitions: 1100,
        gradient_shap_samples: 8,
        seed: 3,
        ..AttributionConfig::default()
    };
    for method in Method::ATTRIBUTION_METHODS {
        attribute_batch(&fx.fold0.model, &sample, method, &cfg, &train).unwrap();
        assert_eq!(before, fx.fold0.model.param_checksum(), "{} mutated the model", method.tag());
    }
}

#[test]
fn gradient_shap_converges_to_integrated_gradients() {
    // Monte-Carlo path sampling vs midpoint quadrature on the same model.
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let model = MlpModel::new(vec![
        Layer::seeded(500, 1000, Activation::Relu, &mut rng),
        Layer::seeded(100, 500, Activation::Relu, &mut rng),
        Layer::seeded(2, 100, Activation::Softmax, &mut rng),
    ])
    .unwrap();
    let x = Array1::from_shape_fn(1000, |_| rng.random_range(-0.5..0.5));
    let zero = Array1::zeros(1000);
    let ig = integrated_gradients(&model, &x, &zero, 0, 256).unwrap();
    let bg = zero.view().insert_axis(Axis(0)).to_owned();
    let sigma = Array1::zeros(1000);
    let gs = gradient_shap(&model, &x, &bg, 0, 4096, &sigma, 5).unwrap();
    let mean_diff = (&ig - &gs).mapv(f64::abs).mean().unwrap();
    assert!(mean_diff < 0.01, "mean |ig - gshap| = {mean_diff}");
}

#[test]
fn timeseries_sample_covariance_converges() {
    let cfg = SynthConfig {
        n_subjects: 2,
        n_planted_edges: 10,
        timepoints: 10_000,
        mode: SynthMode::TimeSeries,
        seed: 11,
        ..SynthConfig::default()
    };
    let (subjects, truth) = generate_synthetic(&cfg).unwrap();
    for subject in &subjects {
        let series = match &subject.data {
            SubjectData::TimeSeries(s) => s,
            _ => panic!("expected time series"),
        };
        let t = series.nrows() as f64;
        let mean = series.mean_axis(Axis(0)).unwrap();
        let centered = series - &mean;
        let sample_cov = centered.t().dot(&centered) / (t - 1.0);
        let expected = constructed_covariance(&truth, cfg.effect_size, subject.label).unwrap();
        let mut max_err = 0.0f64;
        for i in 0..N_ROIS {
            for j in 0..N_ROIS {
                max_err = max_err.max((sample_cov[[i, j]] - expected[[i, j]]).abs());
            }
        }
        assert!(max_err < 0.1, "{}: max covariance error {max_err}", subject.id);
    }
}

#[test]
fn timeseries_pipeline_learns_planted_signal() {
    // Exercises the connectome path end to end: signals -> z-features ->
    // selection -> trained fold.
    let synth = SynthConfig {
        n_subjects: 80,
        n_planted_edges: 30,
        effect_size: 0.6,
        timepoints: 120,
        mode: SynthMode::TimeSeries,
        seed: 23,
        ..SynthConfig::default()
    };
    let (subjects, _) = generate_synthetic(&synth).unwrap();
    let (data, warnings) = featurize_subjects(&subjects).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(data.n_features(), N_EDGES);
    let mut cfg = PipelineConfig::defaults(5);
    cfg.pretrain.epochs = 15;
    cfg.finetune.epochs = 25;
    cfg.svm.epochs = 30;
    let split = stratified_kfold(&data.y, 5, 0.1, 3).unwrap();
    let outcome = run_single_fold(&data, 0, &split.folds[0], &cfg).unwrap();
    assert!(
        outcome.metrics.accuracy >= 0.8,
        "time-series fold accuracy {}",
        outcome.metrics.accuracy
    );
}

#[test]
fn zero_effect_size_is_chance_level() {
    // With no planted signal a linear SVM cannot beat chance.
    let cfg = SynthConfig { effect_size: 0.0, n_subjects: 300, ..SynthConfig::default() };
    let (subjects, _) = generate_synthetic(&cfg).unwrap();
    let (data, _) = featurize_subjects(&subjects).unwrap();
    let y: Vec<f64> = data.y.iter().map(|l| l.signum()).collect();
    let split = stratified_kfold(&data.y, 5, 0.0, 7).unwrap();
    let mut accs = Vec::new();
    for fold in &split.folds {
        let (x_train, _) = data.rows(&fold.train);
        let y_train: Vec<f64> = fold.train.iter().map(|&i| y[i]).collect();
        let model = fcexplain::svm_rfe::train_linear_svm(&x_train, &y_train, &SvmHyper::default()).unwrap();
        let std = fcexplain::svm_rfe::Standardizer::fit(&x_train);
        let (x_test, _) = data.rows(&fold.test);
        let xt = std.transform(&x_test);
        let correct = fold
            .test
            .iter()
            .enumerate()
            .filter(|&(r, &i)| model.decision(&xt.row(r).to_owned()) * y[i] > 0.0)
            .count();
        accs.push(correct as f64 / fold.test.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    // Frozen observation at this seed: 0.5033.
    assert!(mean <= 0.55, "chance-level accuracy {mean}");
}

#[test]
fn roar_first_point_is_method_independent_when_nothing_is_masked() {
    // 60 features, t = 0.01 -> floor(0.6) = 0 columns masked: every method's
    // cell reduces to the same seeded retrain.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 80;
    let d = 60;
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Tc } else { Label::Asd };
        for j in 0..d {
            x[[i, j]] = rng.random_range(-0.5..0.5) + label.signum() * if j < 5 { 0.4 } else { 0.0 };
        }
        labels.push(label);
    }
    let split = stratified_kfold(&labels, 4, 0.1, 9).unwrap();
    let mut rankings = std::collections::BTreeMap::new();
    rankings.insert(Method::Random, fcexplain::attribution::random_ranking(d, 1).unwrap());
    rankings.insert(
        Method::Oracle,
        fcexplain::attribution::FeatureRanking {
            method: Method::Oracle,
            order: (0..d).collect(),
            scores: Array1::zeros(d),
        },
    );
    let cfg = RoarConfig {
        thresholds: vec![0.01, 0.5],
        methods: vec![Method::Random, Method::Oracle],
        pretrain: TrainConfig { epochs: 5, ..TrainConfig::pretrain_defaults(0) },
        finetune: TrainConfig { epochs: 10, learning_rate: 1e-3, ..TrainConfig::finetune_defaults(0) },
        dims: vec![d, 20, 8],
        folds: vec![0, 1],
        base_seed: 77,
    };
    let curves = roar_run(&x, &labels, &split, &rankings, &cfg).unwrap();
    assert_eq!(curves.len(), 2);
    let a = &curves[0].points[0];
    let b = &curves[1].points[0];
    assert_eq!(a.mean_accuracy, b.mean_accuracy);
    assert_eq!(a.std_accuracy, b.std_accuracy);
    // Masking half the features by a ranking that covers the informative
    // block must hurt more than random for the oracle ordering.
    let masked = mask_features(&x, &rankings[&Method::Oracle], 0.5).unwrap();
    assert!(masked.column(0).iter().all(|&v| v == 0.0));
}
