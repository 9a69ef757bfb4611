//! Variational-Bayes HMM over embedding windows with one Gaussian speaker
//! state per initial cluster and PLDA-derived emission parameters.

use nalgebra::{DMatrix, DVector};

use super::VbxConfig;
use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, sorted_symmetric_eigen};
use crate::scoring::PldaModel;

/// Result of [`vbx_resegment`].
#[derive(Debug, Clone)]
pub struct VbxOutput {
    pub partition: Partition,
    /// Window-by-state responsibilities; column `c` belongs to cluster `c` of
    /// `partition`.
    pub responsibilities: DMatrix<f64>,
    /// Lower bound after every iteration.
    pub elbo: Vec<f64>,
}

/// Model in the coordinates where the within-speaker covariance is the
/// identity and the between-speaker covariance is diagonal.
struct Diagonalized {
    /// Per-window transformed observations, scaled by `sqrt(phi)`.
    rho: DMatrix<f64>,
    phi: DVector<f64>,
    /// `-0.5 (|x|^2 + D ln 2 pi)` per window.
    g: DVector<f64>,
}

fn diagonalize(x: &DMatrix<f64>, plda: &PldaModel) -> Result<Diagonalized> {
    let d = plda.dim();
    let l = cholesky(&plda.within, "within-speaker covariance")?;
    let l_inv_b = solve_lower(&l, &plda.between)?;
    let m = solve_lower(&l, &l_inv_b.transpose())?;
    let (phi, u) = sorted_symmetric_eigen(&m);
    let phi = phi.map(|v| v.max(0.0));
    // t = U^T L^-1 (x - mu)
    let centred = crate::linalg::center_rows(x, &plda.mean);
    let white = solve_lower(&l, &centred.transpose())?;
    let t = u.tr_mul(&white).transpose();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let g = DVector::from_iterator(
        t.nrows(),
        t.row_iter().map(|r| -0.5 * (r.norm_squared() + d as f64 * ln_2pi)),
    );
    let sqrt_phi = phi.map(f64::sqrt);
    let mut rho = t;
    for mut row in rho.row_iter_mut() {
        row.component_mul_assign(&sqrt_phi.transpose());
    }
    Ok(Diagonalized { rho, phi, g })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Forward-backward in the log domain. Returns responsibilities and `ln p(X)`.
fn forward_backward(
    log_lik: &DMatrix<f64>,
    log_trans: &DMatrix<f64>,
    log_init: &DVector<f64>,
) -> (DMatrix<f64>, f64) {
    let (n, s) = log_lik.shape();
    let mut fwd = DMatrix::<f64>::zeros(n, s);
    let mut bwd = DMatrix::<f64>::zeros(n, s);
    for j in 0..s {
        fwd[(0, j)] = log_init[j] + log_lik[(0, j)];
    }
    for t in 1..n {
        for j in 0..s {
            let prev = (0..s).map(|i| fwd[(t - 1, i)] + log_trans[(i, j)]);
            fwd[(t, j)] = log_lik[(t, j)] + log_sum_exp(prev);
        }
    }
    for t in (0..n - 1).rev() {
        for i in 0..s {
            let next = (0..s).map(|j| log_trans[(i, j)] + log_lik[(t + 1, j)] + bwd[(t + 1, j)]);
            bwd[(t, i)] = log_sum_exp(next);
        }
    }
    let log_px = log_sum_exp((0..s).map(|j| fwd[(n - 1, j)]));
    let mut gamma = DMatrix::zeros(n, s);
    for t in 0..n {
        for j in 0..s {
            gamma[(t, j)] = (fwd[(t, j)] + bwd[(t, j)] - log_px).exp();
        }
    }
    (gamma, log_px)
}

/// Resegments windows already mapped into the PLDA space of `plda`.
///
/// Each cluster of `init` becomes an HMM state whose mean has the PLDA
/// between-speaker prior and whose emissions use the within-speaker
/// covariance. Self-transitions have probability `loop_probability`, the rest
/// is spread uniformly over the other states, and the initial state
/// distribution is uniform. Iterations alternate the speaker-model and
/// state-posterior updates until the lower bound improves by less than the
/// tolerance. States that win no window are dropped.
pub fn vbx_resegment(
    x: &DMatrix<f64>,
    plda: &PldaModel,
    init: &Partition,
    cfg: &VbxConfig,
) -> Result<VbxOutput> {
    cfg.validate()?;
    let n = x.nrows();
    if init.len() != n {
        return Err(Error::invalid(format!(
            "initial partition has {} items for {n} windows",
            init.len()
        )));
    }
    if x.ncols() != plda.dim() {
        return Err(Error::invalid("observation and PLDA dimensions differ"));
    }
    let s = init.num_clusters();
    if n == 0 || s == 0 {
        return Err(Error::invalid("resegmentation needs at least one window"));
    }
    let model = diagonalize(x, plda)?;
    let d = plda.dim();
    let ratio = cfg.fa / cfg.fb;

    let mut log_trans = DMatrix::from_element(s, s, ((1.0 - cfg.loop_probability) / (s.max(2) - 1) as f64).ln());
    for i in 0..s {
        log_trans[(i, i)] = if s == 1 { 0.0 } else { cfg.loop_probability.ln() };
    }
    let log_init = DVector::from_element(s, -(s as f64).ln());

    // Soft one-hot start from the input partition.
    let mut gamma = DMatrix::<f64>::zeros(n, s);
    let norm = cfg.init_smoothing.exp() + (s - 1) as f64;
    for (t, &l) in init.labels().iter().enumerate() {
        for j in 0..s {
            gamma[(t, j)] = if j == l { cfg.init_smoothing.exp() } else { 1.0 } / norm;
        }
    }

    let mut elbo: Vec<f64> = Vec::new();
    for iteration in 0..cfg.max_iterations {
        let occupancy: Vec<f64> = (0..s).map(|j| gamma.column(j).sum()).collect();
        let inv_l = DMatrix::from_fn(s, d, |j, k| 1.0 / (1.0 + ratio * occupancy[j] * model.phi[k]));
        let weighted = gamma.tr_mul(&model.rho);
        let alpha = DMatrix::from_fn(s, d, |j, k| ratio * inv_l[(j, k)] * weighted[(j, k)]);

        let cross = &model.rho * alpha.transpose();
        let mut log_lik = DMatrix::<f64>::zeros(n, s);
        for j in 0..s {
            let quad: f64 = (0..d)
                .map(|k| model.phi[k] * (inv_l[(j, k)] + alpha[(j, k)] * alpha[(j, k)]))
                .sum();
            for t in 0..n {
                log_lik[(t, j)] = cfg.fa * (cross[(t, j)] - 0.5 * quad + model.g[t]);
            }
        }
        let (g, log_px) = forward_backward(&log_lik, &log_trans, &log_init);
        gamma = g;

        let kl: f64 = inv_l
            .iter()
            .zip(alpha.iter())
            .map(|(&il, &a)| il.ln() - il - a * a + 1.0)
            .sum();
        let bound = log_px + cfg.fb * 0.5 * kl;
        if !bound.is_finite() {
            return Err(Error::numerical(format!(
                "lower bound is not finite at iteration {}",
                iteration + 1
            )));
        }
        if let Some(&prev) = elbo.last() {
            if bound < prev - 1e-8 * prev.abs().max(1.0) {
                log::warn!("VB lower bound decreased at iteration {}: {prev} -> {bound}", iteration + 1);
            }
            elbo.push(bound);
            if bound - prev < cfg.convergence_tolerance {
                break;
            }
        } else {
            elbo.push(bound);
        }
    }

    let labels: Vec<usize> = gamma
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..s {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let partition = Partition::from_labels(&labels);
    // Column c of the output is the state whose windows form cluster c.
    let states: Vec<usize> = partition.clusters().iter().map(|c| labels[c[0]]).collect();
    let responsibilities = DMatrix::from_fn(n, states.len(), |t, c| gamma[(t, states[c])]);
    Ok(VbxOutput {
        partition,
        responsibilities,
        elbo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plda(d: usize, between: f64) -> PldaModel {
        PldaModel::new(
            DVector::zeros(d),
            DMatrix::identity(d, d) * between,
            DMatrix::identity(d, d),
        )
        .unwrap()
    }

    #[test]
    fn single_cluster_is_kept() {
        let x = DMatrix::from_fn(20, 3, |r, c| ((r * 3 + c) % 5) as f64 * 0.1);
        let init = Partition::from_labels(&[0; 20]);
        let out = vbx_resegment(&x, &plda(3, 10.0), &init, &VbxConfig::default()).unwrap();
        assert_eq!(out.partition, init);
        assert!(out.responsibilities.iter().all(|&g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn separated_blocks_are_recovered_from_a_noisy_start() {
        let mut x = DMatrix::zeros(40, 2);
        for t in 0..40 {
            let sign = if t < 20 { 1.0 } else { -1.0 };
            x[(t, 0)] = 5.0 * sign + ((t * 7) % 5) as f64 * 0.1;
            x[(t, 1)] = ((t * 3) % 4) as f64 * 0.1;
        }
        let mut labels: Vec<usize> = (0..40).map(|t| usize::from(t >= 20)).collect();
        labels[3] = 1;
        labels[30] = 0;
        let out = vbx_resegment(&x, &plda(2, 25.0), &Partition::from_labels(&labels), &VbxConfig::default())
            .unwrap();
        let truth: Vec<usize> = (0..40).map(|t| usize::from(t >= 20)).collect();
        assert_eq!(out.partition, Partition::from_labels(&truth));
        for w in out.elbo.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs());
        }
    }

    #[test]
    fn rejects_mismatched_partition() {
        let x = DMatrix::zeros(3, 2);
        assert!(vbx_resegment(&x, &plda(2, 1.0), &Partition::singletons(2), &VbxConfig::default()).is_err());
    }
}
