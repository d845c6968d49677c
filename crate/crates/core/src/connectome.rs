//! ROI time series to Fisher-z connectivity feature vectors.
//!
//! Edges are indexed by the strict lower triangle of the 116x116 matrix:
//! feature `k = i*(i-1)/2 + j` for ROI pair `(i, j)` with `i > j`, giving
//! 116*115/2 = 6670 features in a fixed, bijective order.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::error::{data_err, numerical_err, Result};
use crate::ingest::{FeatureDataset, Subject, SubjectData};

/// ROI count under the bundled atlas. Other counts are not supported.
pub const N_ROIS: usize = 116;
/// Strict-lower-triangle edge count: 116*115/2.
pub const N_EDGES: usize = N_ROIS * (N_ROIS - 1) / 2;
/// Correlations are clamped to ±(1 - this) before atanh.
pub const ATANH_CLAMP_EPS: f64 = 1e-7;

const DEGENERATE_NORM: f64 = 1e-12;

/// Symmetric 116x116 Fisher-z matrix with a zero diagonal by convention.
#[derive(Debug, Clone)]
pub struct ConnectivityMatrix {
    pub values: Array2<f64>,
}

/// Length-6670 feature vector in strict-lower-triangle order.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub values: Array1<f64>,
}

impl FeatureVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.len() != N_EDGES {
            return data_err(format!(
                "feature vector has {} entries, expected {N_EDGES}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return numerical_err("non-finite entry in feature vector");
        }
        Ok(FeatureVector { values })
    }
}

/// Sample Pearson correlation, clamped to [-1, 1] against rounding.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return data_err(format!("pearson length mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return data_err("pearson requires at least 2 observations");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return numerical_err("degenerate correlation: zero variance input");
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fisher z-transform `atanh(r)` with the correlation clamped away from ±1.
pub fn fisher_z(r: f64) -> Result<f64> {
    if !r.is_finite() || r.abs() > 1.0 {
        return data_err(format!("correlation {r} outside [-1, 1]"));
    }
    Ok(r.clamp(-1.0 + ATANH_CLAMP_EPS, 1.0 - ATANH_CLAMP_EPS).atanh())
}

/// Connectivity matrix plus the ROI columns that had zero variance.
#[derive(Debug, Clone)]
pub struct ConnectivityOutcome {
    pub matrix: ConnectivityMatrix,
    /// ROIs whose edges were set to z = 0 because the signal was constant.
    pub degenerate_rois: Vec<usize>,
}

/// Fisher-z connectivity matrix of a T x 116 time-series matrix.
///
/// Each unordered ROI pair is computed once and written to both triangles,
/// so the output is bit-equal to its transpose. Zero-variance ROIs get all
/// their edges set to 0 and are reported back instead of failing the sample.
pub fn connectivity_matrix(series: &Array2<f64>) -> Result<ConnectivityOutcome> {
    let (t, n) = series.dim();
    if n != N_ROIS {
        return data_err(format!("expected {N_ROIS} ROIs, got {n} columns"));
    }
    if t < 2 {
        return data_err(format!("need at least 2 timepoints, got {t}"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return numerical_err("non-finite value in time series");
    }

    // Center each column and normalize to unit norm; degenerate columns are
    // zeroed so their dot products vanish.
    let mut centered = series.clone();
    let mut degenerate_rois = Vec::new();
    for (j, mut col) in centered.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / t as f64;
        col.mapv_inplace(|v| v - mean);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= DEGENERATE_NORM {
            col.fill(0.0);
            degenerate_rois.push(j);
        } else {
            col.mapv_inplace(|v| v / norm);
        }
    }

    let mut values = Array2::zeros((N_ROIS, N_ROIS));
    let cols: Vec<_> = (0..N_ROIS).map(|j| centered.column(j)).collect();
    for i in 1..N_ROIS {
        for j in 0..i {
            let r: f64 = cols[i].dot(&cols[j]);
            let z = fisher_z(r.clamp(-1.0, 1.0))?;
            values[[i, j]] = z;
            values[[j, i]] = z;
        }
    }
    Ok(ConnectivityOutcome { matrix: ConnectivityMatrix { values }, degenerate_rois })
}

/// Flatten the strict lower triangle into the fixed feature order.
pub fn vectorize(cm: &ConnectivityMatrix) -> Result<FeatureVector> {
    let (r, c) = cm.values.dim();
    if r != N_ROIS || c != N_ROIS {
        return data_err(format!("connectivity matrix is {r}x{c}, expected {N_ROIS}x{N_ROIS}"));
    }
    let mut values = Array1::zeros(N_EDGES);
    let mut k = 0;
    for i in 1..N_ROIS {
        for j in 0..i {
            values[k] = cm.values[[i, j]];
            k += 1;
        }
    }
    FeatureVector::new(values)
}

/// Rebuild the symmetric matrix from a feature vector (diagonal zero).
pub fn unvectorize(fv: &FeatureVector) -> ConnectivityMatrix {
    let mut values = Array2::zeros((N_ROIS, N_ROIS));
    for (k, &v) in fv.values.iter().enumerate() {
        let (i, j) = edge_of_index(k).expect("index in range by construction");
        values[[i, j]] = v;
        values[[j, i]] = v;
    }
    ConnectivityMatrix { values }
}

/// ROI pair `(i, j)`, `i > j`, of feature index `k`.
pub fn edge_of_index(k: usize) -> Result<(usize, usize)> {
    if k >= N_EDGES {
        return data_err(format!("edge index {k} out of range [0, {N_EDGES})"));
    }
    // Closed form, with an integer fix-up against float rounding.
    let mut i = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).floor() as usize;
    while i * (i - 1) / 2 > k {
        i -= 1;
    }
    while (i + 1) * i / 2 <= k {
        i += 1;
    }
    let j = k - i * (i - 1) / 2;
    Ok((i, j))
}

/// Feature index of ROI pair `(i, j)` with `i > j`.
pub fn index_of_edge(i: usize, j: usize) -> Result<usize> {
    if i >= N_ROIS || j >= i {
        return data_err(format!("invalid edge ({i}, {j}): need 0 <= j < i < {N_ROIS}"));
    }
    Ok(i * (i - 1) / 2 + j)
}

/// Convert loaded subjects into the feature matrix consumed downstream.
///
/// Time-series subjects go through `connectivity_matrix` + `vectorize`;
/// feature subjects are taken as-is. Returns per-subject degenerate-ROI
/// warnings as `(row, roi)` pairs.
pub fn featurize_subjects(subjects: &[Subject]) -> Result<(FeatureDataset, Vec<(usize, usize)>)> {
    if subjects.is_empty() {
        return data_err("no subjects to featurize");
    }
    let mut x = Array2::zeros((subjects.len(), N_EDGES));
    let mut warnings = Vec::new();
    for (row, subject) in subjects.iter().enumerate() {
        match &subject.data {
            SubjectData::Features(values) => {
                if values.len() != N_EDGES {
                    return data_err(format!(
                        "subject {} has {} features, expected {N_EDGES}",
                        subject.id,
                        values.len()
                    ));
                }
                x.row_mut(row).assign(values);
            }
            SubjectData::TimeSeries(series) => {
                let outcome = connectivity_matrix(series)?;
                for roi in &outcome.degenerate_rois {
                    warnings.push((row, *roi));
                }
                let fv = vectorize(&outcome.matrix)?;
                x.row_mut(row).assign(&fv.values);
            }
        }
    }
    let dataset = FeatureDataset {
        x,
        y: subjects.iter().map(|s| s.label).collect(),
        subject_ids: subjects.iter().map(|s| s.id.clone()).collect(),
        mean_fds: subjects.iter().map(|s| s.mean_fd).collect(),
    };
    Ok((dataset, warnings))
}

/// Write a samples x features matrix as delimited text with a
/// `feature_0..feature_{n-1}` header. Values round-trip bit-exactly.
pub fn write_feature_csv(path: &Path, rows: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..rows.ncols()).map(|k| format!("feature_{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in rows.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a matrix written by `write_feature_csv`.
pub fn read_feature_csv(path: &Path) -> Result<Array2<f64>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return data_err(format!("{}: empty feature file", path.display())),
    };
    let n_cols = header.split(',').count();
    if !header.starts_with("feature_0") {
        return data_err(format!("{}: missing feature header", path.display()));
    }
    let mut values = Vec::new();
    let mut n_rows = 0;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| crate::error::Error::Data(format!("{}: non-numeric cell '{cell}'", path.display())))?;
            if !v.is_finite() {
                return data_err(format!("{}: non-finite value '{cell}'", path.display()));
            }
            values.push(v);
            count += 1;
        }
        if count != n_cols {
            return data_err(format!(
                "{}: row {} has {count} columns, expected {n_cols}",
                path.display(),
                n_rows + 1
            ));
        }
        n_rows += 1;
    }
    Array2::from_shape_vec((n_rows, n_cols), values)
        .map_err(|e| crate::error::Error::Data(format!("{}: {e}", path.display())))
}
