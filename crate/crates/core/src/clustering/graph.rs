use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scoring::{sigmoid, SimilarityMatrix};

/// Directed k-nearest-neighbour graph over embedding windows.
///
/// Row `i` of `W` holds sigmoid edge weights to the `K` most similar other
/// vertices; `P` is `W` with every row normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    k: usize,
    /// Row-wise `(column, weight)`, sorted by column.
    weights: Vec<Vec<(usize, f64)>>,
    transitions: Vec<Vec<(usize, f64)>>,
    /// Vertices with an edge into each vertex.
    incoming: Vec<Vec<usize>>,
}

impl AffinityGraph {
    /// Builds a graph from explicit non-negative weights; the diagonal is ignored.
    pub fn from_weights(w: &DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::invalid("weight matrix must be square"));
        }
        let n = w.nrows();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::new();
            for j in 0..n {
                let v = w[(i, j)];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("weight ({i}, {j}) = {v} is invalid")));
                }
                if i != j && v > 0.0 {
                    row.push((j, v));
                }
            }
            rows.push(row);
        }
        let k = rows.iter().map(Vec::len).max().unwrap_or(0);
        Ok(AffinityGraph::from_rows(k, rows, None))
    }

    fn from_rows(k: usize, weights: Vec<Vec<(usize, f64)>>, fallback: Option<&[Vec<usize>]>) -> Self {
        let n = weights.len();
        let mut transitions = Vec::with_capacity(n);
        for (i, row) in weights.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, v)| v).sum();
            if sum > 0.0 {
                transitions.push(row.iter().map(|&(j, v)| (j, v / sum)).collect());
            } else if let Some(nbrs) = fallback.map(|f| &f[i]).filter(|f| !f.is_empty()) {
                let p = 1.0 / nbrs.len() as f64;
                let mut r: Vec<(usize, f64)> = nbrs.iter().map(|&j| (j, p)).collect();
                r.sort_by_key(|e| e.0);
                transitions.push(r);
            } else {
                transitions.push(Vec::new());
            }
        }
        let mut incoming = vec![Vec::new(); n];
        for (i, row) in transitions.iter().enumerate() {
            for &(j, _) in row {
                incoming[j].push(i);
            }
        }
        AffinityGraph {
            k,
            weights,
            transitions,
            incoming,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weight_row(&self, i: usize) -> &[(usize, f64)] {
        &self.weights[i]
    }

    pub fn transition_row(&self, i: usize) -> &[(usize, f64)] {
        &self.transitions[i]
    }

    pub fn incoming(&self, i: usize) -> &[usize] {
        &self.incoming[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        lookup(&self.weights[i], j)
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        lookup(&self.transitions[i], j)
    }

    pub fn weights_dense(&self) -> DMatrix<f64> {
        dense(&self.weights)
    }

    pub fn transitions_dense(&self) -> DMatrix<f64> {
        dense(&self.transitions)
    }
}

fn lookup(row: &[(usize, f64)], j: usize) -> f64 {
    row.binary_search_by_key(&j, |e| e.0)
        .map(|at| row[at].1)
        .unwrap_or(0.0)
}

fn dense(rows: &[Vec<(usize, f64)>]) -> DMatrix<f64> {
    let n = rows.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            m[(i, j)] = v;
        }
    }
    m
}

/// Keeps, for each vertex, the `k` most similar other vertices (ties to the
/// lower index) with weight `sigmoid(scale * (s - offset))`. A row whose
/// weights all underflow to zero gets uniform transitions over its neighbours.
pub fn build_knn_graph(
    scores: &SimilarityMatrix,
    k: usize,
    scale: f64,
    offset: f64,
) -> Result<AffinityGraph> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::invalid("a graph needs at least two vertices"));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::invalid(format!("K = {k} must lie in [1, {}]", n - 1)));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("sigmoid scale {scale} must be > 0")));
    }
    let s = scores.scores();
    let mut weights = Vec::with_capacity(n);
    let mut neighbours = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.select_nth_unstable_by(k - 1, |&a, &b| s[(i, b)].total_cmp(&s[(i, a)]).then(a.cmp(&b)));
        let mut nbrs: Vec<usize> = order[..k].to_vec();
        nbrs.sort_unstable();
        let row: Vec<(usize, f64)> = nbrs
            .iter()
            .map(|&j| (j, sigmoid(scale * (s[(i, j)] - offset))))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        weights.push(row);
        neighbours.push(nbrs);
    }
    Ok(AffinityGraph::from_rows(k, weights, Some(&neighbours)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreKind;

    fn sim(rows: &[&[f64]]) -> SimilarityMatrix {
        let n = rows.len();
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        SimilarityMatrix::new("r", m, ScoreKind::Cosine).unwrap()
    }

    #[test]
    fn full_k_is_dense_off_diagonal() {
        let s = sim(&[&[1.0, 0.2, 0.3], &[0.2, 1.0, 0.5], &[0.3, 0.5, 1.0]]);
        let g = build_knn_graph(&s, 2, 1.0, 0.0).unwrap();
        let w = g.weights_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w[(i, j)] > 0.0, i != j);
            }
            let sum: f64 = g.transition_row(i).iter().map(|e| e.1).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k_one_keeps_argmax() {
        // Row argmax by hand: 0 -> 2, 1 -> 3, 2 -> 0, 3 -> 1.
        let s = sim(&[
            &[1.0, 0.1, 0.9, 0.3],
            &[0.1, 1.0, 0.2, 0.8],
            &[0.9, 0.2, 1.0, 0.4],
            &[0.3, 0.8, 0.4, 1.0],
        ]);
        let g = build_knn_graph(&s, 1, 1.0, 0.0).unwrap();
        let expect = [2, 3, 0, 1];
        for (i, &j) in expect.iter().enumerate() {
            assert_eq!(g.weight_row(i).len(), 1);
            assert_eq!(g.weight_row(i)[0].0, j);
            assert_eq!(g.transition(i, j), 1.0);
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let s = sim(&[&[1.0, 0.5, 0.5], &[0.5, 1.0, 0.5], &[0.5, 0.5, 1.0]]);
        let g = build_knn_graph(&s, 1, 1.0, 0.0).unwrap();
        assert_eq!(g.weight_row(0)[0].0, 1);
        assert_eq!(g.weight_row(1)[0].0, 0);
        assert_eq!(g.weight_row(2)[0].0, 0);
    }

    #[test]
    fn underflowed_row_gets_uniform_transitions() {
        let s = sim(&[&[0.0, -1e4, -1e4], &[-1e4, 0.0, 1.0], &[-1e4, 1.0, 0.0]]);
        let g = build_knn_graph(&s, 2, 1.0, 0.0).unwrap();
        assert!(g.weight_row(0).is_empty());
        assert_eq!(g.transition(0, 1), 0.5);
        assert_eq!(g.transition(0, 2), 0.5);
    }

    #[test]
    fn rejects_bad_k() {
        let s = sim(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(build_knn_graph(&s, 0, 1.0, 0.0).is_err());
        assert!(build_knn_graph(&s, 2, 1.0, 0.0).is_err());
    }
}
