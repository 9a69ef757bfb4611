//! Graph construction and clustering of embedding windows.

mod ahc;
mod graph;
mod pic;

pub use ahc::{ahc_cluster, estimate_num_speakers, AhcStop};
pub use graph::{build_knn_graph, AffinityGraph};
pub use pic::{
    affinity, conditional_path_integral, init_partition, path_integral, pic_cluster, PicParams,
    PicResult,
};

use crate::error::{Error, Result};

/// A hard clustering of `n` items.
///
/// Cluster ids are dense and ordered by each cluster's smallest member, so
/// two partitions with the same groups compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl Partition {
    /// Normalizes arbitrary labels into canonical cluster ids.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        let mut out = Vec::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            let id = *remap.entry(*l).or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[id].push(i);
            out.push(id);
        }
        Partition {
            labels: out,
            clusters,
        }
    }

    /// Builds a partition from member sets that must be disjoint, non-empty and cover `0..n`.
    pub fn from_clusters(n: usize, clusters: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![usize::MAX; n];
        for (c, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::invalid("empty cluster"));
            }
            for &m in members {
                if m >= n || labels[m] != usize::MAX {
                    return Err(Error::invalid(format!("member {m} is out of range or repeated")));
                }
                labels[m] = c;
            }
        }
        if labels.contains(&usize::MAX) {
            return Err(Error::invalid("clusters do not cover every item"));
        }
        Ok(Partition::from_labels(&labels))
    }

    pub fn singletons(n: usize) -> Self {
        Partition::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_ids() {
        let p = Partition::from_labels(&[7, 3, 7, 1]);
        assert_eq!(p.labels(), &[0, 1, 0, 2]);
        assert_eq!(p.clusters(), &[vec![0, 2], vec![1], vec![3]]);
        assert_eq!(p, Partition::from_clusters(4, &[vec![3], vec![1], vec![0, 2]]).unwrap());
    }

    #[test]
    fn rejects_invalid_member_sets() {
        assert!(Partition::from_clusters(3, &[vec![0, 1]]).is_err());
        assert!(Partition::from_clusters(2, &[vec![0, 1], vec![1]]).is_err());
        assert!(Partition::from_clusters(2, &[vec![0, 1], vec![]]).is_err());
    }
}
