//! Dataset loading, framewise-displacement filtering, and synthetic data.
//!
//! File formats:
//! - manifest: comma-delimited with header exactly
//!   `subject_id,path,label,mean_fd,site`; `mean_fd` may be empty when a
//!   companion motion file `<data stem>.motion.csv` exists.
//! - time series: first line holds the 116 ROI names, then T data rows.
//! - motion: no header, T rows of `tx,ty,tz,rx,ry,rz` (mm, mm, mm, rad,
//!   rad, rad).

mod synth;

pub use synth::{
    constructed_covariance, generate_synthetic, read_planted_edges, write_synthetic, PlantedTruth,
    SynthConfig, SynthMode,
};

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::connectome::N_ROIS;
use crate::error::{data_err, Error, Result};

/// Classification label. `Tc` is class index 0, `Asd` index 1 and the
/// positive class for sensitivity/precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Tc,
    Asd,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Tc => 0,
            Label::Asd => 1,
        }
    }

    pub fn from_index(idx: usize) -> Result<Self> {
        match idx {
            0 => Ok(Label::Tc),
            1 => Ok(Label::Asd),
            other => data_err(format!("class index {other} out of range")),
        }
    }

    /// +1 for the positive class (ASD), -1 for controls.
    pub fn signum(self) -> f64 {
        match self {
            Label::Tc => -1.0,
            Label::Asd => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Tc => "TC",
            Label::Asd => "ASD",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "TC" => Ok(Label::Tc),
            "ASD" => Ok(Label::Asd),
            other => data_err(format!("unknown label '{other}' (expected ASD or TC)")),
        }
    }
}

/// One subject's parcellated scan.
#[derive(Debug, Clone)]
pub struct RoiTimeSeries {
    pub subject_id: String,
    pub site: String,
    pub label: Label,
    /// T x 116, arbitrary signal units, all finite.
    pub series: Array2<f64>,
    /// Mean framewise displacement in millimeters.
    pub mean_fd: f64,
}

/// Per-frame head-motion parameters: T rows of 3 translations (mm) and
/// 3 rotations (rad).
#[derive(Debug, Clone)]
pub struct MotionParams {
    pub frames: Array2<f64>,
}

/// One manifest row.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub mean_fd: Option<f64>,
    pub site: String,
}

/// Parsed dataset manifest; paths resolve relative to the manifest location.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub dir: PathBuf,
}

/// Subject payload: either a raw time series or a precomputed feature row.
#[derive(Debug, Clone)]
pub enum SubjectData {
    TimeSeries(Array2<f64>),
    Features(Array1<f64>),
}

/// A loaded subject ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub site: String,
    pub label: Label,
    pub mean_fd: f64,
    pub data: SubjectData,
}

/// Samples x features matrix with aligned labels and metadata.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub x: Array2<f64>,
    pub y: Vec<Label>,
    pub subject_ids: Vec<String>,
    pub mean_fds: Vec<f64>,
}

impl FeatureDataset {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Row subset in the given index order.
    pub fn rows(&self, indices: &[usize]) -> (Array2<f64>, Vec<Label>) {
        let x = self.x.select(ndarray::Axis(0), indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }

    /// Keep only the samples where `keep` is true, preserving order.
    pub fn filter(&self, keep: &[bool]) -> FeatureDataset {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        FeatureDataset {
            x: self.x.select(ndarray::Axis(0), &idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            mean_fds: idx.iter().map(|&i| self.mean_fds[i]).collect(),
        }
    }
}

pub const MANIFEST_HEADER: &str = "subject_id,path,label,mean_fd,site";

/// Parse a dataset manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return data_err(format!("{}: empty manifest", path.display())),
    };
    if header.trim() != MANIFEST_HEADER {
        return data_err(format!(
            "{}: malformed header '{}', expected '{MANIFEST_HEADER}'",
            path.display(),
            header.trim()
        ));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return data_err(format!(
                "{}: row {} has {} fields, expected 5",
                path.display(),
                lineno + 2,
                fields.len()
            ));
        }
        let subject_id = fields[0].trim().to_string();
        if subject_id.is_empty() {
            return data_err(format!("{}: row {} has empty subject_id", path.display(), lineno + 2));
        }
        if !seen.insert(subject_id.clone()) {
            return data_err(format!("{}: duplicate subject '{subject_id}'", path.display()));
        }
        let label = Label::parse(fields[2].trim())?;
        let mean_fd = {
            let cell = fields[3].trim();
            if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("{}: invalid mean_fd '{cell}'", path.display()))
                })?;
                if !v.is_finite() || v < 0.0 {
                    return data_err(format!("{}: negative or non-finite mean_fd {v}", path.display()));
                }
                Some(v)
            }
        };
        entries.push(ManifestEntry {
            subject_id,
            path: PathBuf::from(fields[1].trim()),
            label,
            mean_fd,
            site: fields[4].trim().to_string(),
        });
    }
    Ok(DatasetManifest { entries, dir })
}

/// Parse a time-series file: ROI-name header then T x `expected_rois` rows.
pub fn load_time_series(path: &Path, expected_rois: usize) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return data_err(format!("{}: empty time-series file", path.display())),
    };
    let n_cols = header.split(',').count();
    if n_cols != expected_rois {
        return data_err(format!(
            "{}: expected {expected_rois} ROIs, header has {n_cols} columns",
            path.display()
        ));
    }
    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!("{}: non-numeric cell '{}'", path.display(), cell.trim()))
            })?;
            if !v.is_finite() {
                return data_err(format!("{}: non-finite value '{}'", path.display(), cell.trim()));
            }
            values.push(v);
            count += 1;
        }
        if count != expected_rois {
            return data_err(format!(
                "{}: row {} has {count} columns, expected {expected_rois}",
                path.display(),
                n_rows + 2
            ));
        }
        n_rows += 1;
    }
    if n_rows < 2 {
        return data_err(format!("{}: need at least 2 timepoints, got {n_rows}", path.display()));
    }
    Array2::from_shape_vec((n_rows, expected_rois), values)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Write a time series with the bundled ROI names as header. Values are
/// written in shortest round-trip form so reloads are bit-identical.
pub fn write_time_series(path: &Path, series: &Array2<f64>) -> Result<()> {
    if series.ncols() != N_ROIS {
        return data_err(format!("time series has {} columns, expected {N_ROIS}", series.ncols()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", crate::roi_report::aal_names().join(","))?;
    for row in series.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a motion-parameter file (6 columns, no header).
pub fn load_motion(path: &Path) -> Result<MotionParams> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return data_err(format!(
                "{}: row {} has {} columns, expected 6 (tx,ty,tz,rx,ry,rz)",
                path.display(),
                lineno + 1,
                fields.len()
            ));
        }
        for cell in fields {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!("{}: non-numeric cell '{}'", path.display(), cell.trim()))
            })?;
            values.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return data_err(format!("{}: empty motion file", path.display()));
    }
    let frames = Array2::from_shape_vec((n_rows, 6), values)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(MotionParams { frames })
}

/// Per-frame framewise displacement and its mean.
///
/// `FD_t = |dtx| + |dty| + |dtz| + 50 * (|drx| + |dry| + |drz|)` for t >= 1,
/// with rotations converted to millimeters of arc on a 50 mm sphere, and
/// `FD_0 = 0`. The mean runs over all T frames including frame 0.
pub fn compute_fd_power(motion: &MotionParams) -> Result<(Vec<f64>, f64)> {
    let t = motion.frames.nrows();
    if t == 0 {
        return data_err("empty motion series");
    }
    if t < 2 {
        return data_err("motion series needs at least 2 frames");
    }
    let mut fd = vec![0.0; t];
    for i in 1..t {
        let prev = motion.frames.row(i - 1);
        let cur = motion.frames.row(i);
        let trans: f64 = (0..3).map(|c| (cur[c] - prev[c]).abs()).sum();
        let rot: f64 = (3..6).map(|c| (cur[c] - prev[c]).abs()).sum();
        fd[i] = trans + 50.0 * rot;
    }
    let mean = fd.iter().sum::<f64>() / t as f64;
    Ok((fd, mean))
}

/// Access to the mean framewise displacement of a sample.
pub trait MeanFd {
    fn mean_fd(&self) -> f64;
}

impl MeanFd for RoiTimeSeries {
    fn mean_fd(&self) -> f64 {
        self.mean_fd
    }
}

impl MeanFd for Subject {
    fn mean_fd(&self) -> f64 {
        self.mean_fd
    }
}

/// Retain samples with `mean_fd <= threshold` (boundary kept), preserving
/// order. Returns the filtered list and how many samples were removed; an
/// empty result is legal and left to the caller to warn about.
pub fn filter_by_fd<T: MeanFd>(dataset: Vec<T>, threshold: f64) -> Result<(Vec<T>, usize)> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("fd threshold {threshold} must be > 0")));
    }
    let before = dataset.len();
    let kept: Vec<T> = dataset.into_iter().filter(|s| s.mean_fd() <= threshold).collect();
    let removed = before - kept.len();
    Ok((kept, removed))
}

/// Load every subject referenced by a manifest, resolving mean FD from the
/// manifest column or, when empty, from the companion motion file
/// `<data stem>.motion.csv`. Data files are detected by header: an ROI-name
/// header loads as a time series, a `feature_*` header as a feature row.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<Subject>> {
    let mut subjects = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let data_path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            manifest.dir.join(&entry.path)
        };
        let first_line = {
            let file = std::fs::File::open(&data_path)
                .map_err(|e| Error::Data(format!("{}: {e}", data_path.display())))?;
            let mut reader = BufReader::new(file);
            let mut line = String::new();
            reader.read_line(&mut line)?;
            line
        };
        let data = if first_line.starts_with("feature_0") {
            let matrix = crate::connectome::read_feature_csv(&data_path)?;
            if matrix.nrows() != 1 {
                return data_err(format!(
                    "{}: feature file has {} rows, expected 1",
                    data_path.display(),
                    matrix.nrows()
                ));
            }
            SubjectData::Features(matrix.row(0).to_owned())
        } else {
            SubjectData::TimeSeries(load_time_series(&data_path, N_ROIS)?)
        };
        let mean_fd = match entry.mean_fd {
            Some(v) => v,
            None => {
                let motion_path = data_path.with_file_name(format!(
                    "{}.motion.csv",
                    data_path.file_stem().and_then(|s| s.to_str()).unwrap_or("subject")
                ));
                if !motion_path.exists() {
                    return data_err(format!(
                        "subject {}: mean_fd missing from manifest and no motion file at {}",
                        entry.subject_id,
                        motion_path.display()
                    ));
                }
                let motion = load_motion(&motion_path)?;
                if let SubjectData::TimeSeries(series) = &data {
                    if motion.frames.nrows() != series.nrows() {
                        return data_err(format!(
                            "subject {}: motion file has {} frames but the scan has {} timepoints",
                            entry.subject_id,
                            motion.frames.nrows(),
                            series.nrows()
                        ));
                    }
                }
                compute_fd_power(&motion)?.1
            }
        };
        subjects.push(Subject {
            id: entry.subject_id.clone(),
            site: entry.site.clone(),
            label: entry.label,
            mean_fd,
            data,
        });
    }
    Ok(subjects)
}

/// Write a manifest for the given subjects, with data paths as given.
pub fn write_manifest(path: &Path, rows: &[(String, String, Label, f64, String)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MANIFEST_HEADER}")?;
    for (id, data_path, label, mean_fd, site) in rows {
        writeln!(w, "{id},{data_path},{},{mean_fd},{site}", label.as_str())?;
    }
    w.flush()?;
    Ok(())
}
