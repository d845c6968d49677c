//! Remove-and-retrain benchmarking of feature rankings.
//!
//! For every (method, threshold) pair the top-ranked fraction of features is
//! zeroed in every split, the model is retrained from a fresh seeded
//! initialization, and test accuracy is measured. A ranking that found the
//! discriminative features produces a steep accuracy drop; the seeded random
//! permutation is the reference for "any features removed".

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::attribution::{FeatureRanking, Method};
use crate::chart;
use crate::error::{config_err, data_err, Result};
use crate::evaluation::{train_and_score_reduced, FoldSplit};
use crate::ingest::{Label, PlantedTruth};
use crate::nn::TrainConfig;
use crate::seed::derive_seed;
use crate::svm_rfe::SelectedFeatures;

/// The benchmark's threshold grid.
pub const DEFAULT_THRESHOLDS: [f64; 13] =
    [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

/// Grid configuration.
#[derive(Debug, Clone)]
pub struct RoarConfig {
    /// Strictly increasing fractions in (0, 1).
    pub thresholds: Vec<f64>,
    pub methods: Vec<Method>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Network dims from model input to code, e.g. `[1000, 500, 100]`.
    pub dims: Vec<usize>,
    /// Which folds of the split to retrain on.
    pub folds: Vec<usize>,
    pub base_seed: u64,
}

impl RoarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return config_err("no thresholds configured");
        }
        for pair in self.thresholds.windows(2) {
            if pair[0] >= pair[1] {
                return config_err("thresholds must be strictly increasing");
            }
        }
        if self
            .thresholds
            .iter()
            .any(|&t| !(0.0..1.0).contains(&t) || t <= 0.0)
        {
            return config_err("thresholds must lie in (0, 1)");
        }
        if self.methods.is_empty() {
            return config_err("no methods configured");
        }
        if self.folds.is_empty() {
            return config_err("no folds configured");
        }
        Ok(())
    }
}

/// One method's accuracy curve over the threshold grid.
#[derive(Debug, Clone)]
pub struct RoarPoint {
    pub t: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RoarCurve {
    pub method: Method,
    pub points: Vec<RoarPoint>,
}

impl RoarCurve {
    /// Trapezoidal area under the curve restricted to t <= limit, with the
    /// unmasked accuracy pinned at t = 0. Lower means a steeper early drop.
    pub fn auc_up_to(&self, limit: f64, accuracy_at_zero: f64) -> f64 {
        let mut prev_t = 0.0;
        let mut prev_a = accuracy_at_zero;
        let mut area = 0.0;
        for p in &self.points {
            if p.t > limit {
                break;
            }
            area += (p.t - prev_t) * (p.mean_accuracy + prev_a) / 2.0;
            prev_t = p.t;
            prev_a = p.mean_accuracy;
        }
        area
    }
}

/// Zero out the top `floor(t * n_features)` ranked features in every sample.
/// The input is not mutated.
pub fn mask_features(x: &Array2<f64>, ranking: &FeatureRanking, t: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return config_err(format!("mask fraction {t} must be in [0, 1]"));
    }
    if ranking.order.len() != x.ncols() {
        return data_err(format!(
            "ranking covers {} features but matrix has {}",
            ranking.order.len(),
            x.ncols()
        ));
    }
    let n_mask = (t * x.ncols() as f64).floor() as usize;
    let mut out = x.clone();
    for &col in ranking.order.iter().take(n_mask) {
        out.column_mut(col).fill(0.0);
    }
    Ok(out)
}

/// Planted-truth ranking in the reduced space: kept planted edges first (by
/// ascending original index), then the rest.
pub fn oracle_ranking(truth: &PlantedTruth, selection: &SelectedFeatures) -> FeatureRanking {
    let mut planted: Vec<(usize, usize)> = Vec::new();
    let mut rest: Vec<(usize, usize)> = Vec::new();
    for (reduced, &original) in selection.kept.iter().enumerate() {
        if truth.contains(original) {
            planted.push((original, reduced));
        } else {
            rest.push((original, reduced));
        }
    }
    planted.sort_unstable();
    rest.sort_unstable();
    let n = selection.kept.len();
    let mut order = Vec::with_capacity(n);
    let mut scores = ndarray::Array1::zeros(n);
    for (_, reduced) in &planted {
        scores[*reduced] = 1.0;
        order.push(*reduced);
    }
    order.extend(rest.iter().map(|&(_, reduced)| reduced));
    FeatureRanking { method: Method::Oracle, order, scores }
}

/// Run the full (method x threshold x fold) grid on an already-reduced
/// feature matrix.
///
/// Every cell retrains from scratch; the retrain seed depends only on the
/// fold (never on method or threshold), so all curves share the exact t=0
/// behavior and fresh initializations are a pure function of the seed.
pub fn roar_run(
    x_reduced: &Array2<f64>,
    y: &[Label],
    split: &FoldSplit,
    rankings: &BTreeMap<Method, FeatureRanking>,
    cfg: &RoarConfig,
) -> Result<Vec<RoarCurve>> {
    cfg.validate()?;
    for m in &cfg.methods {
        let ranking = rankings
            .get(m)
            .ok_or_else(|| crate::error::Error::Config(format!("no ranking provided for {}", m.tag())))?;
        if ranking.order.len() != x_reduced.ncols() {
            return data_err(format!("ranking for {} does not cover the reduced space", m.tag()));
        }
    }
    for &f in &cfg.folds {
        if f >= split.folds.len() {
            return config_err(format!("fold {f} out of range"));
        }
    }

    let cells: Vec<(usize, usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| {
            (0..cfg.thresholds.len())
                .flat_map(move |t| (0..cfg.folds.len()).map(move |f| (m, t, f)))
        })
        .collect();

    let accuracies: Result<Vec<f64>> = cells
        .par_iter()
        .map(|&(mi, ti, fi)| {
            let method = cfg.methods[mi];
            let t = cfg.thresholds[ti];
            let fold_idx = cfg.folds[fi];
            let ranking = &rankings[&method];
            let masked = mask_features(x_reduced, ranking, t)?;
            let pre = TrainConfig {
                seed: derive_seed(cfg.base_seed, "roar-pretrain", fold_idx as u64),
                ..cfg.pretrain.clone()
            };
            let fine = TrainConfig {
                seed: derive_seed(cfg.base_seed, "roar-finetune", fold_idx as u64),
                ..cfg.finetune.clone()
            };
            train_and_score_reduced(&masked, y, &split.folds[fold_idx], &cfg.dims, &pre, &fine)
        })
        .collect();
    let accuracies = accuracies?;

    let n_folds = cfg.folds.len() as f64;
    let mut curves = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut points = Vec::with_capacity(cfg.thresholds.len());
        for (ti, &t) in cfg.thresholds.iter().enumerate() {
            let base = mi * cfg.thresholds.len() * cfg.folds.len() + ti * cfg.folds.len();
            let fold_accs = &accuracies[base..base + cfg.folds.len()];
            let mean = fold_accs.iter().sum::<f64>() / n_folds;
            let var = fold_accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n_folds;
            points.push(RoarPoint { t, mean_accuracy: mean, std_accuracy: var.sqrt() });
        }
        curves.push(RoarCurve { method, points });
    }
    Ok(curves)
}

/// Write the curve table (`method,t,mean_accuracy,std_accuracy`) and a
/// self-contained SVG line chart, one polyline per method.
pub fn emit_roar_table(curves: &[RoarCurve], table_path: &Path, chart_path: &Path) -> Result<()> {
    if curves.is_empty() {
        return data_err("no curves to emit");
    }
    let mut w = BufWriter::new(std::fs::File::create(table_path)?);
    writeln!(w, "method,t,mean_accuracy,std_accuracy")?;
    for curve in curves {
        for p in &curve.points {
            writeln!(
                w,
                "{},{},{:.6},{:.6}",
                curve.method.tag(),
                p.t,
                p.mean_accuracy,
                p.std_accuracy
            )?;
        }
    }
    w.flush()?;

    let series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|c| {
            (
                c.method.tag().to_string(),
                c.points.iter().map(|p| (p.t, p.mean_accuracy)).collect(),
            )
        })
        .collect();
    let svg = chart::line_chart_svg(
        &series,
        "Accuracy after removing top-ranked features",
        "fraction of features removed",
        "test accuracy",
    );
    std::fs::write(chart_path, svg)?;
    Ok(())
}
