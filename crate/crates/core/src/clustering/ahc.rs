use super::Partition;
use crate::scoring::SimilarityMatrix;

/// When average-linkage agglomeration stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AhcStop {
    /// Stop once the best remaining linkage falls below this score.
    Threshold(f64),
    /// Stop once this many clusters remain.
    Clusters(usize),
}

/// Average-linkage agglomerative clustering on similarity scores.
///
/// Merges the pair with the highest mean cross-cluster score; ties go to the
/// lexicographically smallest pair of cluster ids (smallest member vertex).
pub fn ahc_cluster(scores: &SimilarityMatrix, stop: AhcStop) -> Partition {
    let n = scores.len();
    if n == 0 {
        return Partition::from_labels(&[]);
    }
    let mut sim = scores.scores().clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    // Slot ids equal the smallest member, so lower slot wins ties.
    let best_of = |k: usize, sim: &nalgebra::DMatrix<f64>, active: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if j != k && active[j] && best.map_or(true, |(v, _)| sim[(k, j)] > v) {
                best = Some((sim[(k, j)], j));
            }
        }
        best
    };
    let mut best: Vec<Option<(f64, usize)>> = (0..n).map(|k| best_of(k, &sim, &active)).collect();

    let mut count = n;
    loop {
        let min_clusters = match stop {
            AhcStop::Clusters(c) => c.max(1),
            AhcStop::Threshold(_) => 1,
        };
        if count <= min_clusters {
            break;
        }
        let mut pick: Option<(f64, usize, usize)> = None;
        for k in (0..n).filter(|&k| active[k]) {
            if let Some((v, j)) = best[k] {
                let (a, b) = if k < j { (k, j) } else { (j, k) };
                let better = match pick {
                    None => true,
                    Some((pv, pa, pb)) => v > pv || (v == pv && (a, b) < (pa, pb)),
                };
                if better {
                    pick = Some((v, a, b));
                }
            }
        }
        let Some((value, a, b)) = pick else { break };
        if let AhcStop::Threshold(t) = stop {
            if value < t {
                break;
            }
        }

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (na * sim[(a, k)] + nb * sim[(b, k)]) / (na + nb);
                sim[(a, k)] = v;
                sim[(k, a)] = v;
            }
        }
        active[b] = false;
        size[a] += size[b];
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        count -= 1;

        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            match best[k] {
                Some((_, j)) if j == a || j == b => best[k] = best_of(k, &sim, &active),
                Some((v, j)) => {
                    let s = sim[(k, a)];
                    if s > v || (s == v && a < j) {
                        best[k] = Some((s, a));
                    }
                }
                None => best[k] = best_of(k, &sim, &active),
            }
        }
        best[a] = best_of(a, &sim, &active);
        best[b] = None;
    }
    Partition::from_labels(&owner)
}

/// Number of clusters AHC leaves at the given stopping threshold.
pub fn estimate_num_speakers(scores: &SimilarityMatrix, threshold: f64) -> usize {
    ahc_cluster(scores, AhcStop::Threshold(threshold)).num_clusters()
}
