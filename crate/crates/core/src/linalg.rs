//! Small dense solvers used by the surrogate-model attribution methods.

use ndarray::{Array1, Array2};

use crate::error::{numerical_err, Result};

/// Solve `A x = b` for a symmetric positive-definite `A` via Cholesky.
///
/// Fails with a numerical error when a pivot is not strictly positive, which
/// is how an under-determined weighted least-squares system surfaces. Runs
/// on flat row-major storage; the inner updates are contiguous dot products.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return numerical_err(format!(
            "solve_spd shape mismatch: a is {}x{}, b has {}",
            a.nrows(),
            a.ncols(),
            b.len()
        ));
    }
    let mut l: Vec<f64> = a.iter().copied().collect();
    let dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(p, q)| p * q).sum() };
    let mut pivot_row = vec![0.0f64; n];
    for j in 0..n {
        pivot_row[..j].copy_from_slice(&l[j * n..j * n + j]);
        let d = l[j * n + j] - dot(&pivot_row[..j], &pivot_row[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return numerical_err(format!("matrix not positive definite at pivot {j}"));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let s = l[i * n + j] - dot(&l[i * n..i * n + j], &pivot_row[..j]);
            l[i * n + j] = s / d;
        }
    }
    // Forward substitution: L y = b.
    let mut y: Vec<f64> = b.to_vec();
    for i in 0..n {
        let s = dot(&l[i * n..i * n + i], &y[..i]);
        y[i] = (y[i] - s) / l[i * n + i];
    }
    // Back substitution: L^T x = y.
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(Array1::from_vec(x))
}
