//! Pairwise similarity between embeddings of one recording.
//!
//! Two scorers are provided: cosine similarity after a PCA projection, and
//! the log-likelihood ratio of a two-covariance Gaussian PLDA model applied
//! after a recording-level PCA that keeps a fixed fraction of the energy.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::container::Container;
use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::linalg::{
    center_rows, covariance, inverse_spd, log_det_spd, sorted_symmetric_eigen, symmetrize,
};

pub const PCA_TAG: [u8; 4] = *b"PCA1";
pub const PLDA_TAG: [u8; 4] = *b"PLDA";

/// How many principal directions to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaTarget {
    /// A fixed count, capped by the rank of the data.
    Dims(usize),
    /// The smallest count whose eigenvalues reach this fraction of the total.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `D x d`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Non-increasing, non-negative.
    pub eigenvalues: DVector<f64>,
}

/// Dimension chosen by the cumulative-energy rule for a non-increasing spectrum.
pub fn energy_dims(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut cum = 0.0;
    for (k, v) in eigenvalues.iter().enumerate() {
        cum += v;
        if cum >= fraction * total * (1.0 - 1e-12) {
            return k + 1;
        }
    }
    eigenvalues.len()
}

/// Fits a PCA on the rows of `x`.
pub fn fit_pca(x: &DMatrix<f64>, target: PcaTarget) -> Result<PcaModel> {
    if x.nrows() < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let (mean, cov) = covariance(x);
    let (mut values, vectors) = sorted_symmetric_eigen(&cov);
    values.apply(|v| *v = v.max(0.0));
    let top = values[0];
    let rank = values
        .iter()
        .filter(|&&v| v > top * 1e-10 * x.ncols() as f64 && v > 0.0)
        .count();
    let d = match target {
        PcaTarget::Dims(k) => k.min(rank).max(1),
        PcaTarget::Energy(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("energy fraction {f} not in (0, 1]")));
            }
            energy_dims(values.as_slice(), f)
        }
    };
    Ok(PcaModel {
        mean,
        basis: vectors.columns(0, d).into_owned(),
        eigenvalues: values.rows(0, d).into_owned(),
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Projects every row of `x` (mean-centred) onto the basis.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "PCA expects dimension {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(center_rows(x, &self.mean) * &self.basis)
    }

    pub fn reconstruct(&self, projected: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = projected * self.basis.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (d_in, d) = (self.input_dim(), self.output_dim());
        let mut m = DMatrix::zeros(d + 2, d_in);
        m.row_mut(0).copy_from(&self.mean.transpose());
        for j in 0..d {
            m.row_mut(j + 1).copy_from(&self.basis.column(j).transpose());
            m[(d + 1, j)] = self.eigenvalues[j];
        }
        Container::from_matrix(PCA_TAG, &m).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, PCA_TAG)?;
        if c.rows < 3 || c.rows - 2 > c.cols {
            return Err(Error::format(4, "PCA container has an impossible shape"));
        }
        let m = c.to_matrix();
        let d = c.rows - 2;
        Ok(PcaModel {
            mean: m.row(0).transpose(),
            basis: m.rows(1, d).transpose(),
            eigenvalues: m.row(d + 1).columns(0, d).transpose(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Cosine,
    Plda,
}

/// Symmetric pairwise scores of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub recording_id: String,
    scores: DMatrix<f64>,
    pub kind: ScoreKind,
}

impl SimilarityMatrix {
    pub fn new(recording_id: impl Into<String>, scores: DMatrix<f64>, kind: ScoreKind) -> Result<Self> {
        if !scores.is_square() {
            return Err(Error::invalid("similarity matrix must be square"));
        }
        let n = scores.nrows();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (scores[(i, j)], scores[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::numerical(format!("non-finite score at ({i}, {j})")));
                }
                if (a - b).abs() > 1e-6 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::invalid(format!("scores not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SimilarityMatrix {
            recording_id: recording_id.into(),
            scores,
            kind,
        })
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[(i, j)]
    }

    /// Affine re-scaling of the off-diagonal scores to zero mean and unit
    /// variance; the diagonal goes through the same map.
    pub fn standardized(&self) -> SimilarityMatrix {
        let n = self.len();
        let count = (n * n.saturating_sub(1)) as f64;
        if count == 0.0 {
            return self.clone();
        }
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v = self.scores[(i, j)];
                    sum += v;
                    sq += v * v;
                }
            }
        }
        let mean = sum / count;
        let var = (sq / count - mean * mean).max(0.0);
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        SimilarityMatrix {
            recording_id: self.recording_id.clone(),
            scores: self.scores.map(|v| (v - mean) / std),
            kind: self.kind,
        }
    }
}

/// Cosine similarity of the PCA projections of the rows of `x`.
/// Rows whose projection has zero norm get an all-zero row and column.
pub fn cosine_similarity(
    recording_id: &str,
    x: &DMatrix<f64>,
    pca: &PcaModel,
) -> Result<SimilarityMatrix> {
    let mut p = pca.project(x)?;
    let n = p.nrows();
    let mut zero = vec![false; n];
    for (i, mut row) in p.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            zero[i] = true;
        }
    }
    let mut s = &p * p.transpose();
    for i in 0..n {
        for j in 0..i {
            let v = (0.5 * (s[(i, j)] + s[(j, i)])).clamp(-1.0, 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
        s[(i, i)] = 1.0;
    }
    for i in (0..n).filter(|&i| zero[i]) {
        s.row_mut(i).fill(0.0);
        s.column_mut(i).fill(0.0);
    }
    SimilarityMatrix::new(recording_id, s, ScoreKind::Cosine)
}

/// Two-covariance PLDA: `x = mean + y + e` with speaker variable
/// `y ~ N(0, between)` and residual `e ~ N(0, within)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = 1.0 + m.amax();
    if (m - m.transpose()).amax() > 1e-8 * scale {
        return Err(Error::invalid(format!("{what} covariance is not symmetric")));
    }
    Ok(())
}

impl PldaModel {
    pub fn new(mean: DVector<f64>, between: DMatrix<f64>, within: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(Error::invalid("PLDA covariances must be D x D"));
        }
        check_symmetric(&between, "between-speaker")?;
        check_symmetric(&within, "within-speaker")?;
        crate::linalg::cholesky(&within, "within-speaker covariance")?;
        Ok(PldaModel {
            mean,
            between: symmetrize(&between),
            within: symmetrize(&within),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Restricts the model to the subspace of `pca`: `B' = P^T B P`, mean
    /// expressed in the PCA coordinates.
    pub fn project(&self, pca: &PcaModel) -> Result<PldaModel> {
        let p = &pca.basis;
        PldaModel::new(
            p.tr_mul(&(&self.mean - &pca.mean)),
            p.tr_mul(&(&self.between * p)),
            p.tr_mul(&(&self.within * p)),
        )
    }

    /// Same model after the affine map `x -> A (x - shift)`.
    pub fn transform(&self, a: &DMatrix<f64>, shift: &DVector<f64>) -> Result<PldaModel> {
        PldaModel::new(
            a * (&self.mean - shift),
            a * &self.between * a.transpose(),
            a * &self.within * a.transpose(),
        )
    }

    pub fn scorer(&self) -> Result<PldaScorer> {
        PldaScorer::new(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let mut m = DMatrix::zeros(2 * d + 1, d);
        m.row_mut(0).copy_from(&self.mean.transpose());
        m.rows_mut(1, d).copy_from(&self.between);
        m.rows_mut(d + 1, d).copy_from(&self.within);
        Container::from_matrix(PLDA_TAG, &m).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, PLDA_TAG)?;
        if c.rows != 2 * c.cols + 1 {
            return Err(Error::format(4, "PLDA container must have 2*D+1 rows"));
        }
        let m = c.to_matrix();
        let d = c.cols;
        PldaModel::new(
            m.row(0).transpose(),
            m.rows(1, d).into_owned(),
            m.rows(d + 1, d).into_owned(),
        )
    }
}

/// Precomputed quadratic form of the PLDA log-likelihood ratio.
///
/// With `T = B + W`, the same-speaker joint covariance is `[[T, B], [B, T]]`
/// and the different-speaker one is `diag(T, T)`. Writing the inverse of the
/// former as `[[A, C], [C, A]]`, the ratio for centred `u, v` is
/// `1/2 (u'Qu + v'Qv) - u'Cv + k` with `Q = T^-1 - A`.
#[derive(Debug, Clone)]
pub struct PldaScorer {
    mean: DVector<f64>,
    q: DMatrix<f64>,
    c: DMatrix<f64>,
    constant: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let b = &model.between;
        let t = b + &model.within;
        let t_inv = inverse_spd(&t, "total covariance")?;
        let schur = symmetrize(&(&t - b * &t_inv * b));
        let a = inverse_spd(&schur, "same-speaker conditional covariance")?;
        let c = -(&t_inv * b * &a);
        let q = &t_inv - &a;
        let constant = 0.5 * log_det_spd(&t, "total covariance")?
            - 0.5 * log_det_spd(&schur, "same-speaker conditional covariance")?;
        Ok(PldaScorer {
            mean: model.mean.clone(),
            q,
            c: symmetrize(&c),
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn bilinear(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.c * v))
    }

    /// Log-likelihood ratio, exactly symmetric in its arguments.
    pub fn llr(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
        if x1.len() != self.dim() || x2.len() != self.dim() {
            return Err(Error::invalid(format!(
                "PLDA expects dimension {}, got {} and {}",
                self.dim(),
                x1.len(),
                x2.len()
            )));
        }
        let u = x1 - &self.mean;
        let v = x2 - &self.mean;
        let quad = u.dot(&(&self.q * &u)) + v.dot(&(&self.q * &v));
        let cross = self.bilinear(&u, &v) + self.bilinear(&v, &u);
        Ok(0.5 * quad - 0.5 * cross + self.constant)
    }

    /// All pairwise ratios between the rows of `x`.
    pub fn score_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "PLDA expects dimension {}, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let u = center_rows(x, &self.mean);
        let uq = &u * &self.q;
        let quad: Vec<f64> = (0..u.nrows()).map(|i| uq.row(i).dot(&u.row(i))).collect();
        let cross = &u * &self.c * u.transpose();
        let n = x.nrows();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            0.5 * (quad[i] + quad[j]) - 0.5 * (cross[(i, j)] + cross[(j, i)]) + self.constant
        }))
    }
}

/// PLDA log-likelihood ratio of one pair under `model`.
pub fn plda_llr(model: &PldaModel, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
    model.scorer()?.llr(x1, x2)
}

/// Recording-level PLDA scoring: PCA keeping `energy_fraction` of the
/// recording's energy, the model restricted to that subspace, then all
/// pairwise log-likelihood ratios.
pub fn score_plda_matrix(
    seq: &EmbeddingSequence,
    model: &PldaModel,
    energy_fraction: f64,
) -> Result<SimilarityMatrix> {
    let x = seq.to_f64();
    if x.ncols() != model.dim() {
        return Err(Error::invalid(format!(
            "PLDA model has dimension {}, embeddings {}",
            model.dim(),
            x.ncols()
        )));
    }
    let pca = fit_pca(&x, PcaTarget::Energy(energy_fraction))?;
    let reduced = model.project(&pca)?;
    let projected = pca.project(&x)?;
    let scores = reduced.scorer()?.score_rows(&projected)?;
    SimilarityMatrix::new(seq.recording_id.clone(), scores, ScoreKind::Plda)
}

/// Logistic map of every score: `1 / (1 + exp(-scale (s - offset)))`.
pub fn sigmoid_weights(scores: &SimilarityMatrix, scale: f64, offset: f64) -> Result<DMatrix<f64>> {
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("sigmoid scale {scale} must be > 0")));
    }
    Ok(scores.scores.map(|s| sigmoid(scale * (s - offset))))
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
