//! Planted-biomarker synthetic data.
//!
//! Real recordings carry no ground truth about which connections matter; the
//! generator plants it. A chosen set of edges differs in distribution between
//! the two classes while everything else is shared, so feature selection,
//! attribution rankings, and remove-and-retrain curves can all be validated
//! against the planted set.
//!
//! Edge mode emits Fisher-z feature vectors directly (cheap, used for the
//! retrain grid); time-series mode emits ROI signals from a per-group factor
//! model whose covariance is valid by construction and differs between groups
//! exactly on the planted ROI pairs.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{write_manifest, write_time_series, Label, Subject, SubjectData};
use crate::connectome::{edge_of_index, write_feature_csv, N_EDGES, N_ROIS};
use crate::error::{config_err, Error, Result};

/// Feature standard deviation in edge mode.
const EDGE_SIGMA: f64 = 0.3;
/// Loading of the global factor shared by every ROI (time-series mode).
const GLOBAL_LOADING: f64 = 0.3;
/// Minimum residual variance kept per ROI (time-series mode).
const RESIDUAL_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Edge,
    TimeSeries,
}

impl SynthMode {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "edge" => Ok(SynthMode::Edge),
            "timeseries" => Ok(SynthMode::TimeSeries),
            other => config_err(format!("unknown synth mode '{other}' (edge|timeseries)")),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SynthMode::Edge => "edge",
            SynthMode::TimeSeries => "timeseries",
        }
    }
}

/// Generator configuration.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_planted_edges: usize,
    /// Between-class shift of each planted edge (correlation/z units).
    pub effect_size: f64,
    pub timepoints: usize,
    /// Fraction of subjects flagged with mean FD above 0.2 and injected noise.
    pub high_fd_fraction: f64,
    /// Magnitude of the additive noise on flagged subjects.
    pub noise_scale: f64,
    pub mode: SynthMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 884,
            n_planted_edges: 100,
            effect_size: 0.3,
            timepoints: 150,
            high_fd_fraction: 0.0,
            noise_scale: 0.0,
            mode: SynthMode::Edge,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return config_err("n_subjects must be >= 2");
        }
        if self.n_planted_edges > N_EDGES {
            return config_err(format!(
                "n_planted_edges {} exceeds total edge count {N_EDGES}",
                self.n_planted_edges
            ));
        }
        if !(0.0..=1.0).contains(&self.high_fd_fraction) {
            return config_err("high_fd_fraction must be in [0, 1]");
        }
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return config_err("noise_scale must be finite and >= 0");
        }
        if !self.effect_size.is_finite() || self.effect_size < 0.0 {
            return config_err("effect_size must be finite and >= 0");
        }
        if self.timepoints < 2 {
            return config_err("timepoints must be >= 2");
        }
        if self.mode == SynthMode::TimeSeries {
            let planted_corr = GLOBAL_LOADING * GLOBAL_LOADING + self.effect_size / 2.0;
            if planted_corr >= 1.0 {
                return config_err(format!(
                    "effect_size {} drives planted correlations to {planted_corr} >= 1",
                    self.effect_size
                ));
            }
        }
        Ok(())
    }

    /// Per-ROI cap on how many planted edges may touch one ROI, so each
    /// ROI keeps positive residual variance in the factor model.
    fn multiplicity_cap(&self) -> usize {
        let per_edge = self.effect_size / 2.0;
        if per_edge <= 0.0 {
            return usize::MAX;
        }
        let budget = 1.0 - GLOBAL_LOADING * GLOBAL_LOADING - RESIDUAL_MARGIN;
        (budget / per_edge).floor() as usize
    }
}

/// Ground truth: the feature indices planted to differ between classes.
#[derive(Debug, Clone)]
pub struct PlantedTruth {
    /// Sorted, unique indices in `[0, 6670)`.
    pub edge_indices: Vec<usize>,
}

impl PlantedTruth {
    pub fn contains(&self, k: usize) -> bool {
        self.edge_indices.binary_search(&k).is_ok()
    }
}

fn subject_label(i: usize) -> Label {
    if i % 2 == 0 {
        Label::Tc
    } else {
        Label::Asd
    }
}

fn sample_planted_edges(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let cap = cfg.multiplicity_cap();
    if cap == 0 {
        return config_err(format!(
            "effect_size {} leaves no per-ROI variance budget",
            cfg.effect_size
        ));
    }
    let mut order: Vec<usize> = (0..N_EDGES).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    let mut multiplicity = vec![0usize; N_ROIS];
    let mut chosen = Vec::with_capacity(cfg.n_planted_edges);
    for k in order {
        if chosen.len() == cfg.n_planted_edges {
            break;
        }
        let (i, j) = edge_of_index(k)?;
        if multiplicity[i] < cap && multiplicity[j] < cap {
            multiplicity[i] += 1;
            multiplicity[j] += 1;
            chosen.push(k);
        }
    }
    if chosen.len() < cfg.n_planted_edges {
        return config_err(format!(
            "cannot place {} planted edges under per-ROI cap {cap}",
            cfg.n_planted_edges
        ));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Factor loadings and residual variances for one group.
struct FactorModel {
    /// 116 x (1 + planted) loading matrix.
    loadings: Array2<f64>,
    /// Per-ROI residual standard deviation.
    residual_sd: Array1<f64>,
}

fn build_factor_model(truth: &PlantedTruth, effect_size: f64, label: Label) -> Result<FactorModel> {
    let p = truth.edge_indices.len();
    let lambda = (effect_size / 2.0).sqrt();
    let mut loadings = Array2::zeros((N_ROIS, 1 + p));
    for r in 0..N_ROIS {
        loadings[[r, 0]] = GLOBAL_LOADING;
    }
    for (e, &k) in truth.edge_indices.iter().enumerate() {
        let (i, j) = edge_of_index(k)?;
        loadings[[i, 1 + e]] = lambda;
        loadings[[j, 1 + e]] = match label {
            Label::Tc => lambda,
            Label::Asd => -lambda,
        };
    }
    let mut residual_sd = Array1::zeros(N_ROIS);
    for r in 0..N_ROIS {
        let explained: f64 = loadings.row(r).iter().map(|v| v * v).sum();
        let resid = 1.0 - explained;
        if resid < RESIDUAL_MARGIN / 2.0 {
            return Err(Error::Config(format!(
                "ROI {r} residual variance {resid} too small; reduce effect_size or planted count"
            )));
        }
        residual_sd[r] = resid.sqrt();
    }
    Ok(FactorModel { loadings, residual_sd })
}

/// The covariance the factor model is built to realize for one group:
/// `B B^T + diag(residual)`. Unit diagonal; planted pairs differ between
/// groups by the configured effect size.
pub fn constructed_covariance(truth: &PlantedTruth, effect_size: f64, label: Label) -> Result<Array2<f64>> {
    let model = build_factor_model(truth, effect_size, label)?;
    let mut cov = model.loadings.dot(&model.loadings.t());
    for r in 0..N_ROIS {
        cov[[r, r]] += model.residual_sd[r] * model.residual_sd[r];
    }
    Ok(cov)
}

/// Generate a synthetic dataset. Pure function of the configuration:
/// identical configs produce bit-identical subjects and truth.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<Subject>, PlantedTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let planted = sample_planted_edges(cfg, &mut rng)?;
    let truth = PlantedTruth { edge_indices: planted };

    let n_flagged = (cfg.high_fd_fraction * cfg.n_subjects as f64).floor() as usize;
    let flagged: std::collections::HashSet<usize> =
        rand::seq::index::sample(&mut rng, cfg.n_subjects, n_flagged)
            .into_iter()
            .collect();

    let shift = cfg.effect_size / 2.0;
    let factor_models = if cfg.mode == SynthMode::TimeSeries {
        Some((
            build_factor_model(&truth, cfg.effect_size, Label::Tc)?,
            build_factor_model(&truth, cfg.effect_size, Label::Asd)?,
        ))
    } else {
        None
    };

    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let label = subject_label(i);
        let is_flagged = flagged.contains(&i);
        let data = match cfg.mode {
            SynthMode::Edge => {
                let mut values = Array1::zeros(N_EDGES);
                for k in 0..N_EDGES {
                    let noise: f64 = rng.sample(StandardNormal);
                    values[k] = EDGE_SIGMA * noise;
                }
                for &k in &truth.edge_indices {
                    values[k] += match label {
                        Label::Tc => shift,
                        Label::Asd => -shift,
                    };
                }
                if is_flagged {
                    for k in 0..N_EDGES {
                        let noise: f64 = rng.sample(StandardNormal);
                        values[k] += cfg.noise_scale * noise;
                    }
                }
                SubjectData::Features(values)
            }
            SynthMode::TimeSeries => {
                let (tc_model, asd_model) = factor_models.as_ref().expect("built above");
                let model = match label {
                    Label::Tc => tc_model,
                    Label::Asd => asd_model,
                };
                let n_factors = model.loadings.ncols();
                let mut series = Array2::zeros((cfg.timepoints, N_ROIS));
                let mut factors = Array1::zeros(n_factors);
                for t in 0..cfg.timepoints {
                    for f in 0..n_factors {
                        factors[f] = rng.sample(StandardNormal);
                    }
                    let common = model.loadings.dot(&factors);
                    for r in 0..N_ROIS {
                        let eps: f64 = rng.sample(StandardNormal);
                        series[[t, r]] = common[r] + model.residual_sd[r] * eps;
                    }
                }
                if is_flagged {
                    for v in series.iter_mut() {
                        let noise: f64 = rng.sample(StandardNormal);
                        *v += cfg.noise_scale * noise;
                    }
                }
                SubjectData::TimeSeries(series)
            }
        };
        let mean_fd = if is_flagged {
            0.25 + 0.2 * rng.random::<f64>()
        } else {
            0.02 + 0.16 * rng.random::<f64>()
        };
        subjects.push(Subject {
            id: format!("sub-{:05}", i + 1),
            site: "synth".into(),
            label,
            mean_fd,
            data,
        });
    }
    Ok((subjects, truth))
}

/// Write a generated dataset: `manifest.csv`, one data file per subject,
/// and `planted_edges.txt` with one feature index per line.
pub fn write_synthetic(dir: &Path, subjects: &[Subject], truth: &PlantedTruth) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest_rows = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let file_name = format!("{}.csv", subject.id);
        let path = dir.join(&file_name);
        match &subject.data {
            SubjectData::Features(values) => {
                let row = values.view().insert_axis(ndarray::Axis(0)).to_owned();
                write_feature_csv(&path, &row)?;
            }
            SubjectData::TimeSeries(series) => {
                write_time_series(&path, series)?;
            }
        }
        manifest_rows.push((
            subject.id.clone(),
            file_name,
            subject.label,
            subject.mean_fd,
            subject.site.clone(),
        ));
    }
    write_manifest(&dir.join("manifest.csv"), &manifest_rows)?;
    let mut planted = String::new();
    for k in &truth.edge_indices {
        planted.push_str(&format!("{k}\n"));
    }
    std::fs::write(dir.join("planted_edges.txt"), planted)?;
    Ok(())
}

/// Read a `planted_edges.txt` file.
pub fn read_planted_edges(path: &Path) -> Result<PlantedTruth> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut edge_indices = Vec::new();
    for line in content.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let k: usize = line
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad edge index '{line}'", path.display())))?;
        if k >= N_EDGES {
            return Err(Error::Data(format!("{}: edge index {k} out of range", path.display())));
        }
        edge_indices.push(k);
    }
    edge_indices.sort_unstable();
    edge_indices.dedup();
    Ok(PlantedTruth { edge_indices })
}
