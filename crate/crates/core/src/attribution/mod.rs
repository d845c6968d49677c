//! Per-feature importance for the trained classifier.
//!
//! Every method targets the pre-softmax score of the model's predicted class
//! for each sample (post-softmax probabilities saturate and flatten
//! gradients). The default single baseline is the zero vector: features are
//! correlations, and zero correlation is the uninformative value — the same
//! convention the retrain benchmark and LIME perturbations use.

mod deeplift;
mod gradients;
mod kernel_shap;
mod lime;

pub use deeplift::{deep_lift, deep_lift_shap};
pub use gradients::{gradient_shap, guided_backprop, integrated_gradients, logit_gradients};
pub use kernel_shap::kernel_shap;
pub use lime::{fit_weighted_ridge, lime};

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{config_err, data_err, Error, Result};
use crate::nn::MlpModel;
use crate::seed::derive_seed;

/// Attribution / ranking method tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    IntegratedGradients,
    DeepLift,
    DeepLiftShap,
    GradientShap,
    GuidedBackprop,
    Lime,
    KernelShap,
    /// Seeded random permutation baseline.
    Random,
    /// Planted-truth ranking; only defined on synthetic data.
    Oracle,
}

impl Method {
    pub const ATTRIBUTION_METHODS: [Method; 7] = [
        Method::IntegratedGradients,
        Method::DeepLift,
        Method::DeepLiftShap,
        Method::GradientShap,
        Method::GuidedBackprop,
        Method::Lime,
        Method::KernelShap,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::IntegratedGradients => "integrated_gradients",
            Method::DeepLift => "deep_lift",
            Method::DeepLiftShap => "deep_lift_shap",
            Method::GradientShap => "gradient_shap",
            Method::GuidedBackprop => "guided_backprop",
            Method::Lime => "lime",
            Method::KernelShap => "kernel_shap",
            Method::Random => "random",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        for m in [
            Method::IntegratedGradients,
            Method::DeepLift,
            Method::DeepLiftShap,
            Method::GradientShap,
            Method::GuidedBackprop,
            Method::Lime,
            Method::KernelShap,
            Method::Random,
            Method::Oracle,
        ] {
            if m.tag() == token {
                return Ok(m);
            }
        }
        config_err(format!("unknown method '{token}'"))
    }
}

/// Hyperparameters for the attribution methods.
#[derive(Debug, Clone)]
pub struct AttributionConfig {
    pub ig_steps: usize,
    /// Background samples drawn for the *-Shap methods.
    pub background_size: usize,
    pub gradient_shap_samples: usize,
    /// Noise scale as a fraction of each feature's background std.
    pub gradient_shap_noise: f64,
    pub lime_samples: usize,
    /// Kernel width on the Hamming-fraction distance.
    pub lime_kernel_width: f64,
    /// Ridge strength for the LIME and KernelSHAP solves.
    pub ridge_lambda: f64,
    pub kernel_shap_coalitions: usize,
    pub seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            ig_steps: 256,
            background_size: 50,
            gradient_shap_samples: 64,
            gradient_shap_noise: 0.1,
            lime_samples: 2000,
            lime_kernel_width: 0.25,
            ridge_lambda: 1e-3,
            kernel_shap_coalitions: 2048,
            seed: 0,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps < 1
            || self.background_size < 1
            || self.gradient_shap_samples < 1
            || self.lime_samples < 10
            || self.kernel_shap_coalitions < 1
        {
            return config_err("attribution sample counts must be positive (lime >= 10)");
        }
        if self.gradient_shap_noise < 0.0 {
            return config_err("gradient_shap noise must be >= 0");
        }
        if self.ridge_lambda <= 0.0 {
            return config_err("ridge lambda must be > 0");
        }
        if self.lime_kernel_width <= 0.0 {
            return config_err("lime kernel width must be > 0");
        }
        Ok(())
    }
}

/// Signed per-sample importance scores for one method.
#[derive(Debug, Clone)]
pub struct Attribution {
    pub method: Method,
    /// samples x features.
    pub values: Array2<f64>,
    /// Target class index per sample (the model's prediction).
    pub targets: Vec<usize>,
}

/// A permutation of the feature indices by descending importance.
#[derive(Debug, Clone)]
pub struct FeatureRanking {
    pub method: Method,
    pub order: Vec<usize>,
    /// The per-feature score vector the order was derived from (zeros for
    /// the random baseline).
    pub scores: Array1<f64>,
}

impl FeatureRanking {
    pub fn validate_permutation(&self) -> Result<()> {
        let n = self.order.len();
        let mut seen = vec![false; n];
        for &i in &self.order {
            if i >= n || seen[i] {
                return data_err(format!("ranking is not a permutation at index {i}"));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Predicted class per row: argmax of the softmax output, ties to class 0.
pub fn predicted_classes(model: &MlpModel, x: &Array2<f64>) -> Result<Vec<usize>> {
    let cache = model.forward(x)?;
    Ok(cache
        .output()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Run one attribution method over a batch of samples.
///
/// `background` provides the pool the *-Shap methods draw baselines from
/// (typically the training split); the single-baseline methods use the zero
/// vector. Sampling methods derive one seed per (method, sample), so the
/// per-sample computations are order-free and parallelizable.
pub fn attribute_batch(
    model: &MlpModel,
    x: &Array2<f64>,
    method: Method,
    cfg: &AttributionConfig,
    background: &Array2<f64>,
) -> Result<Attribution> {
    cfg.validate()?;
    if x.nrows() == 0 {
        return data_err("no samples to attribute");
    }
    if background.nrows() == 0 {
        return data_err("empty background set");
    }
    if background.ncols() != x.ncols() || x.ncols() != model.input_dim() {
        return data_err("attribution input widths do not match the model");
    }
    let d = x.ncols();
    let targets = predicted_classes(model, x)?;
    let zero_baseline = Array1::<f64>::zeros(d);

    // Seeded background subset shared by all samples.
    let bg = {
        let n = background.nrows();
        let take = cfg.background_size.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "attr-background", 0));
        let idx = rand::seq::index::sample(&mut rng, n, take).into_vec();
        background.select(Axis(0), &idx)
    };
    // Per-feature noise scale for GradientShap.
    let sigma = {
        let n = bg.nrows() as f64;
        let mean = bg.sum_axis(Axis(0)) / n;
        let mut s = Array1::zeros(d);
        for j in 0..d {
            let m = mean[j];
            let var = bg.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            s[j] = cfg.gradient_shap_noise * var.sqrt();
        }
        s
    };

    let rows: Result<Vec<Array1<f64>>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i).to_owned();
            let target = targets[i];
            let sample_seed = derive_seed(cfg.seed, method.tag(), i as u64);
            match method {
                Method::IntegratedGradients => {
                    integrated_gradients(model, &xi, &zero_baseline, target, cfg.ig_steps)
                }
                Method::DeepLift => deep_lift(model, &xi, &zero_baseline, target),
                Method::DeepLiftShap => deep_lift_shap(model, &xi, &bg, target),
                Method::GradientShap => gradient_shap(
                    model,
                    &xi,
                    &bg,
                    target,
                    cfg.gradient_shap_samples,
                    &sigma,
                    sample_seed,
                ),
                Method::GuidedBackprop => guided_backprop(model, &xi, target),
                Method::Lime => lime(
                    model,
                    &xi,
                    target,
                    cfg.lime_samples,
                    cfg.lime_kernel_width,
                    cfg.ridge_lambda,
                    sample_seed,
                ),
                Method::KernelShap => kernel_shap(
                    model,
                    &xi,
                    &zero_baseline,
                    target,
                    cfg.kernel_shap_coalitions,
                    cfg.ridge_lambda,
                    sample_seed,
                ),
                Method::Random | Method::Oracle => {
                    config_err(format!("{} is a ranking, not an attribution method", method.tag()))
                }
            }
        })
        .collect();
    let rows = rows?;
    let mut values = Array2::zeros((x.nrows(), d));
    for (i, row) in rows.into_iter().enumerate() {
        values.row_mut(i).assign(&row);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite attribution from {}", method.tag())));
    }
    Ok(Attribution { method, values, targets })
}

/// Reduce per-sample attributions to a global ranking: score is the mean
/// absolute attribution per feature, sorted descending, ties to the lower
/// index.
pub fn rank_features(attr: &Attribution) -> FeatureRanking {
    let n = attr.values.nrows() as f64;
    let scores: Array1<f64> = attr.values.map_axis(Axis(0), |col| {
        col.iter().map(|v| v.abs()).sum::<f64>() / n
    });
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    FeatureRanking { method: attr.method, order, scores }
}

/// Seeded uniform permutation baseline.
pub fn random_ranking(n_features: usize, seed: u64) -> Result<FeatureRanking> {
    if n_features == 0 {
        return config_err("random ranking needs at least one feature");
    }
    let mut order: Vec<usize> = (0..n_features).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    Ok(FeatureRanking { method: Method::Random, order, scores: Array1::zeros(n_features) })
}

/// Write a ranking: `# method=<tag> seed=<s>` then one index per line.
pub fn write_ranking(path: &Path, ranking: &FeatureRanking, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# method={} seed={seed}", ranking.method.tag())?;
    for idx in &ranking.order {
        writeln!(w, "{idx}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a ranking written by `write_ranking`.
pub fn read_ranking(path: &Path) -> Result<FeatureRanking> {
    let reader = BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let mut lines = reader.lines();
    let method = match lines.next() {
        Some(line) => {
            let line = line?;
            let tag = line
                .strip_prefix("# method=")
                .and_then(|rest| rest.split_whitespace().next())
                .ok_or_else(|| Error::Data(format!("{}: missing ranking header", path.display())))?;
            Method::parse(tag)?
        }
        None => return data_err(format!("{}: empty ranking file", path.display())),
    };
    let mut order = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        order.push(
            line.parse()
                .map_err(|_| Error::Data(format!("{}: bad index '{line}'", path.display())))?,
        );
    }
    let scores = Array1::zeros(order.len());
    let ranking = FeatureRanking { method, order, scores };
    ranking.validate_permutation()?;
    Ok(ranking)
}

/// Export global scores: `feature_index,original_edge_index,score`.
pub fn write_attribution_scores(
    path: &Path,
    ranking: &FeatureRanking,
    reduced_to_original: &[usize],
) -> Result<()> {
    if reduced_to_original.len() != ranking.scores.len() {
        return data_err("reduced-to-original map does not match feature count");
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "feature_index,original_edge_index,score")?;
    for (k, &orig) in reduced_to_original.iter().enumerate() {
        writeln!(w, "{k},{orig},{:.12e}", ranking.scores[k])?;
    }
    w.flush()?;
    Ok(())
}

/// Read scores written by `write_attribution_scores`; returns
/// `(reduced_to_original, scores)`.
pub fn read_attribution_scores(path: &Path) -> Result<(Vec<usize>, Array1<f64>)> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut mapping = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            if line != "feature_index,original_edge_index,score" {
                return data_err(format!("{}: bad scores header", path.display()));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return data_err(format!("{}: bad scores row '{line}'", path.display()));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad feature index", path.display())))?;
        if k != mapping.len() {
            return data_err(format!("{}: scores rows out of order", path.display()));
        }
        mapping.push(
            fields[1]
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad edge index", path.display())))?,
        );
        scores.push(
            fields[2]
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{}: bad score", path.display())))?,
        );
    }
    Ok((mapping, Array1::from_vec(scores)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ATTRIBUTION_METHODS {
            assert_eq!(Method::parse(m.tag()).unwrap(), m);
        }
        assert_eq!(Method::parse("random").unwrap(), Method::Random);
        assert!(Method::parse("saliency").is_err());
    }

    #[test]
    fn rank_features_absolute_value_ordering() {
        let attr = Attribution {
            method: Method::DeepLift,
            values: ndarray::array![[0.1, -0.5, 0.3]],
            targets: vec![0],
        };
        let ranking = rank_features(&attr);
        assert_eq!(ranking.order, vec![1, 2, 0]);
        ranking.validate_permutation().unwrap();
    }

    #[test]
    fn rank_features_duplicate_samples_and_ties() {
        let single = Attribution {
            method: Method::DeepLift,
            values: ndarray::array![[0.2, -0.7, 0.4, 0.0]],
            targets: vec![1],
        };
        let doubled = Attribution {
            method: Method::DeepLift,
            values: ndarray::array![[0.2, -0.7, 0.4, 0.0], [0.2, -0.7, 0.4, 0.0]],
            targets: vec![1, 1],
        };
        assert_eq!(rank_features(&single).order, rank_features(&doubled).order);

        let equal = Attribution {
            method: Method::DeepLift,
            values: ndarray::array![[0.5, -0.5, 0.5]],
            targets: vec![0],
        };
        assert_eq!(rank_features(&equal).order, vec![0, 1, 2]);
    }

    #[test]
    fn random_ranking_is_a_seeded_permutation() {
        let a = random_ranking(100, 1).unwrap();
        let b = random_ranking(100, 1).unwrap();
        let c = random_ranking(100, 2).unwrap();
        a.validate_permutation().unwrap();
        assert_eq!(a.order, b.order);
        assert_ne!(a.order, c.order);
        let mut sorted = a.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn ranking_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranking_random.txt");
        let ranking = random_ranking(20, 9).unwrap();
        write_ranking(&path, &ranking, 9).unwrap();
        let back = read_ranking(&path).unwrap();
        assert_eq!(back.method, Method::Random);
        assert_eq!(back.order, ranking.order);
    }

    #[test]
    fn scores_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attribution_deep_lift.csv");
        let ranking = FeatureRanking {
            method: Method::DeepLift,
            order: vec![2, 0, 1],
            scores: ndarray::array![0.25, 0.1, 1.5e-7],
        };
        write_attribution_scores(&path, &ranking, &[10, 20, 30]).unwrap();
        let (mapping, scores) = read_attribution_scores(&path).unwrap();
        assert_eq!(mapping, vec![10, 20, 30]);
        assert!((scores[0] - 0.25).abs() < 1e-15);
        assert!((scores[2] - 1.5e-7).abs() < 1e-18);
    }
}
