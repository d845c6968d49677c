//! Linear-SVM recursive feature elimination.
//!
//! A seeded subgradient-descent linear SVM ranks features by squared weight;
//! each round drops the lowest-scoring 10% of survivors until the target
//! count remains. Samples are put into a canonical order (label, then
//! lexicographic feature comparison) before training, so results do not
//! depend on input row order.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, data_err, Error, Result};
use crate::seed::derive_seed;

/// Columns with variance at or below this pass through unscaled.
const STD_FLOOR: f64 = 1e-12;
const SGD_BATCH: usize = 64;

/// Linear SVM hyperparameters.
#[derive(Debug, Clone)]
pub struct SvmHyper {
    /// Regularization trade-off; the L2 coefficient is `1 / (c * n)`.
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper { c: 1.0, epochs: 60, learning_rate: 0.5, seed: 0 }
    }
}

/// Trained linear decision function over the active features.
#[derive(Debug, Clone)]
pub struct LinearSvmModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LinearSvmModel {
    pub fn decision(&self, x: &Array1<f64>) -> f64 {
        self.weights.dot(x) + self.bias
    }
}

/// Column-wise standardization fitted on one split and reused on others.
/// Zero-variance columns pass through untouched.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Standardizer {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut std = Array1::zeros(x.ncols());
        for j in 0..x.ncols() {
            let m = mean[j];
            let var = x.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            std[j] = var.sqrt();
        }
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for j in 0..x.ncols() {
            if self.std[j] > STD_FLOOR {
                let (m, s) = (self.mean[j], self.std[j]);
                out.column_mut(j).mapv_inplace(|v| (v - m) / s);
            }
        }
        out
    }
}

/// Canonical sample order: by label descending, then lexicographic feature
/// comparison. Any permutation of the input rows sorts to the same order,
/// which makes training invariant to how the data was shuffled on disk.
fn canonical_order(x: &Array2<f64>, y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        y[b].total_cmp(&y[a]).then_with(|| {
            let ra = x.row(a);
            let rb = x.row(b);
            for (va, vb) in ra.iter().zip(rb.iter()) {
                match va.total_cmp(vb) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    order
}

/// Train a linear SVM by seeded stochastic subgradient descent on the
/// L2-regularized hinge loss. Features are standardized internally on the
/// given data. Labels must be ±1 with both classes present.
pub fn train_linear_svm(x: &Array2<f64>, y: &[f64], hyper: &SvmHyper) -> Result<LinearSvmModel> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return data_err("empty training matrix");
    }
    if y.len() != n {
        return data_err(format!("{} labels for {n} samples", y.len()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return data_err("labels must be +1 or -1");
    }
    if !y.iter().any(|&v| v == 1.0) || !y.iter().any(|&v| v == -1.0) {
        return data_err("training data has a single class");
    }
    if hyper.c <= 0.0 || hyper.epochs == 0 || hyper.learning_rate <= 0.0 {
        return config_err("svm hyperparameters must be positive");
    }

    let standardizer = Standardizer::fit(x);
    let xs = standardizer.transform(x);
    let order = canonical_order(&xs, y);
    let lambda = 1.0 / (hyper.c * n as f64);

    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut visit = order;

    for epoch in 0..hyper.epochs {
        visit.shuffle(&mut rng);
        let lr = hyper.learning_rate / (1.0 + epoch as f64 * 0.2);
        for batch in visit.chunks(SGD_BATCH) {
            let inv = 1.0 / batch.len() as f64;
            let mut gw = &w * lambda;
            let mut gb = 0.0;
            for &i in batch {
                let row = xs.row(i);
                let margin = y[i] * (w.dot(&row) + b);
                if margin < 1.0 {
                    gw.scaled_add(-y[i] * inv, &row);
                    gb -= y[i] * inv;
                }
            }
            w.scaled_add(-lr, &gw);
            b -= lr * gb;
        }
    }
    Ok(LinearSvmModel { weights: w, bias: b })
}

/// Feature selection outcome: the kept set (ordered by final importance)
/// and which features each round dropped.
#[derive(Debug, Clone)]
pub struct SelectedFeatures {
    /// Original feature indices, most important first.
    pub kept: Vec<usize>,
    /// `(round, dropped original indices in drop order)`.
    pub elimination_order: Vec<(usize, Vec<usize>)>,
}

impl SelectedFeatures {
    /// Original index of a reduced (post-selection) index.
    pub fn original_of(&self, reduced: usize) -> Result<usize> {
        self.kept
            .get(reduced)
            .copied()
            .ok_or_else(|| Error::Data(format!("reduced index {reduced} out of range")))
    }

    /// Check that kept + dropped partitions `0..n_features`.
    pub fn validate_partition(&self, n_features: usize) -> Result<()> {
        let mut seen = vec![false; n_features];
        let mut mark = |idx: usize| -> Result<()> {
            if idx >= n_features {
                return data_err(format!("feature index {idx} out of range"));
            }
            if seen[idx] {
                return data_err(format!("feature index {idx} appears twice"));
            }
            seen[idx] = true;
            Ok(())
        };
        for &k in &self.kept {
            mark(k)?;
        }
        for (_, dropped) in &self.elimination_order {
            for &k in dropped {
                mark(k)?;
            }
        }
        if seen.iter().any(|&s| !s) {
            return data_err("kept + eliminated do not cover all features");
        }
        Ok(())
    }
}

/// Rank features by recursive elimination down to `target_count`.
///
/// Each round trains the SVM on the survivors, scores features by squared
/// weight, and drops the lowest-scoring `ceil(10%)` (clamped so the final
/// round trims exactly to the target). Ties break toward dropping the lower
/// original index first.
pub fn rfe_rank(x: &Array2<f64>, y: &[f64], target_count: usize, hyper: &SvmHyper) -> Result<SelectedFeatures> {
    let d = x.ncols();
    if target_count == 0 {
        return config_err("target_count must be >= 1");
    }
    if target_count >= d {
        return config_err(format!("target_count {target_count} must be < feature count {d}"));
    }
    let mut active: Vec<usize> = (0..d).collect();
    let mut elimination_order = Vec::new();
    let mut round = 0usize;
    while active.len() > target_count {
        let sub = x.select(Axis(1), &active);
        let round_hyper = SvmHyper { seed: derive_seed(hyper.seed, "rfe-round", round as u64), ..hyper.clone() };
        let model = train_linear_svm(&sub, y, &round_hyper)?;
        let mut scored: Vec<(f64, usize)> = model
            .weights
            .iter()
            .enumerate()
            .map(|(pos, w)| (w * w, active[pos]))
            .collect();
        // Lowest score first; ties drop the lower original index first.
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let surplus = active.len() - target_count;
        let n_drop = active.len().div_ceil(10).min(surplus).max(1);
        let dropped: Vec<usize> = scored[..n_drop].iter().map(|&(_, idx)| idx).collect();
        let drop_set: std::collections::HashSet<usize> = dropped.iter().copied().collect();
        active.retain(|idx| !drop_set.contains(idx));
        elimination_order.push((round, dropped));
        round += 1;
    }
    // Order the kept set by final-model importance, descending.
    let sub = x.select(Axis(1), &active);
    let final_hyper = SvmHyper { seed: derive_seed(hyper.seed, "rfe-final", 0), ..hyper.clone() };
    let model = train_linear_svm(&sub, y, &final_hyper)?;
    let mut kept_scored: Vec<(f64, usize)> = model
        .weights
        .iter()
        .enumerate()
        .map(|(pos, w)| (w * w, active[pos]))
        .collect();
    kept_scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(SelectedFeatures {
        kept: kept_scored.into_iter().map(|(_, idx)| idx).collect(),
        elimination_order,
    })
}

/// Gather a feature vector down to the kept set, in kept order.
pub fn apply_selection(fv: &Array1<f64>, sel: &SelectedFeatures) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(sel.kept.len());
    for (r, &k) in sel.kept.iter().enumerate() {
        out[r] = *fv
            .get(k)
            .ok_or_else(|| Error::Data(format!("selection index {k} out of range for vector of {}", fv.len())))?;
    }
    Ok(out)
}

/// Column-gather a whole sample matrix down to the kept set.
pub fn apply_selection_matrix(x: &Array2<f64>, sel: &SelectedFeatures) -> Result<Array2<f64>> {
    for &k in &sel.kept {
        if k >= x.ncols() {
            return data_err(format!("selection index {k} out of range for matrix of {}", x.ncols()));
        }
    }
    Ok(x.select(Axis(1), &sel.kept))
}

/// Serialize a selection: a header line, kept indices one per line, then an
/// `# eliminated` section of `round,index` lines in drop order.
pub fn write_selection(path: &Path, sel: &SelectedFeatures, target: usize, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# svm-rfe v1 target={target} seed={seed}")?;
    for k in &sel.kept {
        writeln!(w, "{k}")?;
    }
    writeln!(w, "# eliminated")?;
    for (round, dropped) in &sel.elimination_order {
        for k in dropped {
            writeln!(w, "{round},{k}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a selection written by `write_selection`.
pub fn read_selection(path: &Path) -> Result<SelectedFeatures> {
    let reader = BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let mut lines = reader.lines();
    match lines.next() {
        Some(line) => {
            let line = line?;
            if !line.starts_with("# svm-rfe v1") {
                return data_err(format!("{}: not a selection file", path.display()));
            }
        }
        None => return data_err(format!("{}: empty selection file", path.display())),
    }
    let mut kept = Vec::new();
    let mut elimination: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    let mut in_eliminated = false;
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "# eliminated" {
            in_eliminated = true;
            continue;
        }
        if in_eliminated {
            let (round, idx) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("{}: bad eliminated row '{line}'", path.display())))?;
            let round: usize = round
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad round '{round}'", path.display())))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad index '{idx}'", path.display())))?;
            elimination.entry(round).or_default().push(idx);
        } else {
            kept.push(
                line.parse()
                    .map_err(|_| Error::Data(format!("{}: bad kept index '{line}'", path.display())))?,
            );
        }
    }
    Ok(SelectedFeatures {
        kept,
        elimination_order: elimination.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn separable_1d_is_classified_perfectly() {
        let x = array![[-1.0], [-1.0], [1.0], [1.0], [-1.0], [1.0]];
        let y = vec![-1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let model = train_linear_svm(&x, &y, &SvmHyper::default()).unwrap();
        let std = Standardizer::fit(&x);
        let xs = std.transform(&x);
        for (i, &label) in y.iter().enumerate() {
            let pred = model.decision(&xs.row(i).to_owned());
            assert!(pred * label > 0.0, "sample {i}: decision {pred} label {label}");
        }
    }

    #[test]
    fn flipping_labels_flips_the_weight_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Array2::zeros((40, 3));
        let mut y = Vec::new();
        for i in 0..40 {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            x[[i, 0]] = label * 0.8 + rng.random_range(-0.2..0.2);
            x[[i, 1]] = rng.random_range(-1.0..1.0);
            x[[i, 2]] = rng.random_range(-1.0..1.0);
            y.push(label);
        }
        let model = train_linear_svm(&x, &y, &SvmHyper::default()).unwrap();
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let model_f = train_linear_svm(&x, &flipped, &SvmHyper::default()).unwrap();
        assert!(model.weights[0] > 0.0);
        assert!(model_f.weights[0] < 0.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let x = array![[1.0], [2.0]];
        assert!(train_linear_svm(&x, &[1.0, 1.0], &SvmHyper::default()).is_err());
        assert!(train_linear_svm(&x, &[1.0, 0.5], &SvmHyper::default()).is_err());
        assert!(train_linear_svm(&Array2::zeros((0, 3)), &[], &SvmHyper::default()).is_err());
    }

    /// Two informative features among noise; labels depend only on them.
    fn two_informative(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 10));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..10 {
                x[[i, j]] = rng.random_range(-1.0..1.0);
            }
            x[[i, 2]] += label * 1.5;
            x[[i, 7]] -= label * 1.5;
            y.push(label);
        }
        (x, y)
    }

    /// Exhaustive 2-subset oracle: Fisher-style separation score per subset.
    fn best_pair_by_separation(x: &Array2<f64>, y: &[f64]) -> (usize, usize) {
        let d = x.ncols();
        let mut best = (0, 1);
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..d {
            for b in (a + 1)..d {
                let mut score = 0.0;
                for j in [a, b] {
                    let pos: Vec<f64> = x
                        .column(j)
                        .iter()
                        .zip(y)
                        .filter(|(_, &l)| l > 0.0)
                        .map(|(v, _)| *v)
                        .collect();
                    let neg: Vec<f64> = x
                        .column(j)
                        .iter()
                        .zip(y)
                        .filter(|(_, &l)| l < 0.0)
                        .map(|(v, _)| *v)
                        .collect();
                    let mp = pos.iter().sum::<f64>() / pos.len() as f64;
                    let mn = neg.iter().sum::<f64>() / neg.len() as f64;
                    let var = x.column(j).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64;
                    score += (mp - mn) * (mp - mn) / var.max(1e-12);
                }
                if score > best_score {
                    best_score = score;
                    best = (a, b);
                }
            }
        }
        best
    }

    #[test]
    fn rfe_recovers_the_informative_pair() {
        let (x, y) = two_informative(80, 11);
        let (a, b) = best_pair_by_separation(&x, &y);
        assert_eq!((a, b), (2, 7), "oracle sanity");
        let sel = rfe_rank(&x, &y, 2, &SvmHyper::default()).unwrap();
        let mut kept = sel.kept.clone();
        kept.sort_unstable();
        assert_eq!(kept, vec![2, 7]);
        sel.validate_partition(10).unwrap();
    }

    #[test]
    fn rfe_boundary_one_drop() {
        let (x, y) = two_informative(30, 3);
        let sel = rfe_rank(&x, &y, 9, &SvmHyper::default()).unwrap();
        assert_eq!(sel.kept.len(), 9);
        assert_eq!(sel.elimination_order.len(), 1);
        assert_eq!(sel.elimination_order[0].1.len(), 1);
        assert!(rfe_rank(&x, &y, 10, &SvmHyper::default()).is_err());
    }

    #[test]
    fn rfe_is_deterministic_and_permutation_invariant() {
        let (x, y) = two_informative(60, 17);
        let hyper = SvmHyper { seed: 9, ..SvmHyper::default() };
        let a = rfe_rank(&x, &y, 4, &hyper).unwrap();
        let b = rfe_rank(&x, &y, 4, &hyper).unwrap();
        assert_eq!(a.kept, b.kept);
        assert_eq!(a.elimination_order, b.elimination_order);

        // Permute the sample rows; the kept set must not change.
        let perm: Vec<usize> = (0..60).rev().collect();
        let xp = x.select(Axis(0), &perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let c = rfe_rank(&xp, &yp, 4, &hyper).unwrap();
        let mut ka = a.kept.clone();
        let mut kc = c.kept.clone();
        ka.sort_unstable();
        kc.sort_unstable();
        assert_eq!(ka, kc);
    }

    #[test]
    fn apply_selection_gathers_in_kept_order() {
        let sel = SelectedFeatures { kept: vec![5, 2], elimination_order: vec![] };
        let fv = array![10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let out = apply_selection(&fv, &sel).unwrap();
        assert_eq!(out, array![15.0, 12.0]);

        let identity = SelectedFeatures { kept: (0..6).collect(), elimination_order: vec![] };
        assert_eq!(apply_selection(&fv, &identity).unwrap(), fv);

        for (reduced, &orig) in sel.kept.iter().enumerate() {
            assert_eq!(sel.original_of(reduced).unwrap(), orig);
        }
        assert!(sel.original_of(2).is_err());

        let bad = SelectedFeatures { kept: vec![9], elimination_order: vec![] };
        assert!(apply_selection(&fv, &bad).is_err());
    }

    #[test]
    fn selection_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selection.txt");
        let sel = SelectedFeatures {
            kept: vec![4, 1, 6],
            elimination_order: vec![(0, vec![0, 3]), (1, vec![2, 5])],
        };
        write_selection(&path, &sel, 3, 42).unwrap();
        let back = read_selection(&path).unwrap();
        assert_eq!(back.kept, sel.kept);
        assert_eq!(back.elimination_order, sel.elimination_order);
        back.validate_partition(7).unwrap();
    }
}
