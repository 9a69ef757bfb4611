//! Embedding preprocessing for resegmentation: whitening, length
//! normalization and LDA, plus the matching PLDA transformations.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, cholesky, covariance, solve_lower, sorted_symmetric_eigen, symmetrize};
use crate::scoring::PldaModel;

pub const WHITENING_TAG: [u8; 4] = *b"WHT1";
pub const LDA_TAG: [u8; 4] = *b"LDA1";

/// Convex combination of two PLDA models, parameter by parameter.
/// `alpha = 1` returns `m1` and `alpha = 0` returns `m2` unchanged.
pub fn interpolate_plda(m1: &PldaModel, m2: &PldaModel, alpha: f64) -> Result<PldaModel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in [0, 1]")));
    }
    if m1.dim() != m2.dim() {
        return Err(Error::invalid("PLDA models differ in dimension"));
    }
    if alpha == 1.0 {
        return Ok(m1.clone());
    }
    if alpha == 0.0 {
        return Ok(m2.clone());
    }
    let beta = 1.0 - alpha;
    PldaModel::new(
        &m1.mean * alpha + &m2.mean * beta,
        &m1.between * alpha + &m2.between * beta,
        &m1.within * alpha + &m2.within * beta,
    )
    .map_err(|e| Error::numerical(format!("interpolated PLDA is invalid: {e}")))
}

/// Mean and covariance of a reference pool of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl WhiteningStats {
    pub fn fit(pool: &DMatrix<f64>) -> Result<Self> {
        if pool.nrows() < 2 {
            return Err(Error::invalid("whitening needs at least two pool vectors"));
        }
        let (mean, covariance) = covariance(pool);
        Ok(WhiteningStats { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Lower Cholesky factor of `covariance + ridge * I`.
    pub fn factor(&self, ridge: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let reg = &self.covariance + DMatrix::identity(d, d) * ridge;
        cholesky(&reg, "whitening covariance").map_err(|_| {
            Error::numerical(format!(
                "whitening covariance is singular with ridge {ridge}; increase the ridge"
            ))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d + 1, d);
        m.row_mut(0).copy_from(&self.mean.transpose());
        m.rows_mut(1, d).copy_from(&self.covariance);
        Container::from_matrix(WHITENING_TAG, &m).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, WHITENING_TAG)?;
        if c.rows != c.cols + 1 {
            return Err(Error::format(4, "whitening container must have D+1 rows"));
        }
        let m = c.to_matrix();
        Ok(WhiteningStats {
            mean: m.row(0).transpose(),
            covariance: symmetrize(&m.rows(1, c.cols).into_owned()),
        })
    }
}

/// `x' = L^-1 (x - mean)` scaled to unit length, row by row.
/// A row equal to the mean stays zero.
pub fn whiten_and_normalize(x: &DMatrix<f64>, stats: &WhiteningStats, ridge: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != stats.dim() {
        return Err(Error::invalid(format!(
            "whitening expects dimension {}, got {}",
            stats.dim(),
            x.ncols()
        )));
    }
    let l = stats.factor(ridge)?;
    let centred = center_rows(x, &stats.mean);
    let mut out = solve_lower(&l, &centred.transpose())?.transpose();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(out)
}

/// Linear discriminant projection `x -> P^T (x - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub mean: DVector<f64>,
    /// `D x out`, columns sorted by discriminant eigenvalue.
    pub projection: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl LdaModel {
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "LDA expects dimension {}, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok(center_rows(x, &self.mean) * &self.projection)
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (d, k) = self.projection.shape();
        let mut m = DMatrix::zeros(k + 2, d);
        m.row_mut(0).copy_from(&self.mean.transpose());
        m.rows_mut(1, k).copy_from(&self.projection.transpose());
        m.row_mut(k + 1).columns_mut(0, k).copy_from(&self.eigenvalues.transpose());
        Container::from_matrix(LDA_TAG, &m).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, LDA_TAG)?;
        if c.rows < 3 || c.rows - 2 > c.cols {
            return Err(Error::format(4, "LDA container has an impossible shape"));
        }
        let m = c.to_matrix();
        let k = c.rows - 2;
        Ok(LdaModel {
            mean: m.row(0).transpose(),
            projection: m.rows(1, k).transpose(),
            eigenvalues: m.row(k + 1).columns(0, k).transpose(),
        })
    }
}

/// Fits LDA on labeled rows and projects them.
///
/// Solves the generalized problem `S_b v = l S_w v` through the Cholesky
/// factor of the within-class scatter. Directions beyond `classes - 1` carry
/// zero discriminant power and continue in order of within-class-whitened
/// variance. A singular within-class scatter gets `ridge * I` added.
pub fn lda_project(
    x: &DMatrix<f64>,
    labels: &[usize],
    out_dim: usize,
    ridge: f64,
) -> Result<(LdaModel, DMatrix<f64>)> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(Error::invalid("one label per row is required"));
    }
    if out_dim == 0 || out_dim > d {
        return Err(Error::invalid(format!("LDA output dimension {out_dim} not in [1, {d}]")));
    }
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::invalid("LDA needs at least two classes"));
    }
    let mean = crate::linalg::row_mean(x);
    let mut sw = DMatrix::<f64>::zeros(d, d);
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for rows in classes.values() {
        let sub = x.select_rows(rows);
        let m = crate::linalg::row_mean(&sub);
        let c = center_rows(&sub, &m);
        sw += c.tr_mul(&c);
        let dm = &m - &mean;
        sb += &dm * dm.transpose() * rows.len() as f64;
    }
    sw /= n as f64;
    sb /= n as f64;
    let l = match cholesky(&sw, "within-class scatter") {
        Ok(l) => l,
        Err(_) => cholesky(&(&sw + DMatrix::identity(d, d) * ridge), "within-class scatter")
            .map_err(|_| {
                Error::numerical(format!("within-class scatter singular even with ridge {ridge}"))
            })?,
    };
    let l_inv_sb = solve_lower(&l, &sb)?;
    let m = solve_lower(&l, &l_inv_sb.transpose())?;
    let (values, vectors) = sorted_symmetric_eigen(&m);
    let top = vectors.columns(0, out_dim).into_owned();
    let projection = l
        .transpose()
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::numerical("singular within-class factor"))?;
    let model = LdaModel {
        mean,
        projection,
        eigenvalues: values.rows(0, out_dim).map(|v| v.max(0.0)),
    };
    let projected = model.apply(x)?;
    Ok((model, projected))
}
