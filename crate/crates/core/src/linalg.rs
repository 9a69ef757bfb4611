//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column mean of the rows of `x`.
pub fn row_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// `x` with `mean` subtracted from every row.
pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }
    out
}

/// Unbiased sample covariance of the rows of `x` (divides by `n - 1`).
pub fn covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = row_mean(x);
    let c = center_rows(x, &mean);
    let denom = (x.nrows().max(2) - 1) as f64;
    let cov = c.tr_mul(&c) / denom;
    (mean, symmetrize(&cov))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// non-increasing and eigenvectors as the matching columns. Each
/// eigenvector's sign is fixed so that its largest-magnitude entry is positive.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (j, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v = -v;
        }
        vectors.set_column(j, &v);
    }
    (values, vectors)
}

/// Lower Cholesky factor, or a numerical error naming `what`.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let l = cholesky(m, what)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    l.solve_lower_triangular(b)
        .ok_or_else(|| Error::numerical("singular triangular factor"))
}
