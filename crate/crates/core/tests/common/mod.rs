//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls the library's algorithms; the
//! oracles work from definitions on dense matrices or by enumeration.
#![allow(dead_code)]

pub mod cases;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use picdiar::annotation::Annotation;
use picdiar::clustering::AffinityGraph;
use rand::Rng;

/// Random graph on `n` vertices: every ordered pair gets an edge with
/// probability `density` and a weight in `(0.05, 1)`. Every vertex keeps at
/// least one outgoing edge.
pub fn random_weights(rng: &mut impl Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(density) {
                w[(i, j)] = rng.gen_range(0.05..1.0);
            }
        }
        if n > 1 && (0..n).all(|j| w[(i, j)] == 0.0) {
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            w[(i, j)] = rng.gen_range(0.05..1.0);
        }
    }
    w
}

/// Same as [`random_weights`] but with no edge between the vertex groups
/// `0..split` and `split..n`.
pub fn random_split_weights(rng: &mut impl Rng, n: usize, split: usize, density: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for (lo, hi) in [(0, split), (split, n)] {
        let block = random_weights(rng, hi - lo, density);
        w.view_mut((lo, lo), (hi - lo, hi - lo)).copy_from(&block);
    }
    w
}

/// Row-normalized transition matrix of explicit weights.
pub fn transitions(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = w.clone();
    for mut row in p.row_iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row /= s;
        }
    }
    p
}

/// Walk sum `sum_{L=0..=max_len} z^L * sum over walks of length L that stay
/// in `union`, start and end in `ends`, of the product of transition
/// probabilities`, divided by `|ends|^2`. The walks are enumerated length by
/// length, accumulating the weight of all walks that share an end vertex.
pub fn truncated_walk_sum(p: &DMatrix<f64>, ends: &[usize], union: &[usize], z: f64, max_len: usize) -> f64 {
    let n = p.nrows();
    let inside: Vec<bool> = (0..n).map(|v| union.contains(&v)).collect();
    let mut mass = vec![0.0; n];
    for &v in ends {
        mass[v] = 1.0;
    }
    let mut total = 0.0;
    let mut zl = 1.0;
    for len in 0..=max_len {
        total += zl * ends.iter().map(|&v| mass[v]).sum::<f64>();
        if len == max_len {
            break;
        }
        let mut next = vec![0.0; n];
        for u in 0..n {
            if mass[u] == 0.0 || !inside[u] {
                continue;
            }
            for v in 0..n {
                if inside[v] {
                    next[v] += mass[u] * p[(u, v)];
                }
            }
        }
        mass = next;
        zl *= z;
    }
    let k = ends.len() as f64;
    total / (k * k)
}

/// Literal enumeration of every walk of length `<= max_len` inside `set`,
/// one walk at a time. Exponential; only for tiny graphs.
pub fn enumerated_walk_sum(p: &DMatrix<f64>, set: &[usize], z: f64, max_len: usize) -> f64 {
    fn extend(p: &DMatrix<f64>, set: &[usize], z: f64, at: usize, weight: f64, left: usize, acc: &mut f64) {
        *acc += weight;
        if left == 0 {
            return;
        }
        for &v in set {
            let step = p[(at, v)];
            if step > 0.0 {
                extend(p, set, z, v, weight * z * step, left - 1, acc);
            }
        }
    }
    let mut acc = 0.0;
    for &s in set {
        extend(p, set, z, s, 1.0, max_len, &mut acc);
    }
    let k = set.len() as f64;
    acc / (k * k)
}

/// Smallest truncation length, at least 40, for which the neglected tail
/// `z^(L+1) / (1 - z)` falls below `tol`.
pub fn truncation_length(z: f64, tol: f64) -> usize {
    let mut len = 40;
    while z.powi(len as i32 + 1) / (1.0 - z) > tol {
        len += 1;
    }
    len
}

/// `1_a' (I - z P_U)^-1 1_a / |a|^2` with a dense inverse.
pub fn dense_conditional(p: &DMatrix<f64>, a: &[usize], union: &[usize], z: f64) -> f64 {
    let m = union.len();
    let sub = DMatrix::from_fn(m, m, |i, j| p[(union[i], union[j])]);
    let inv = (DMatrix::identity(m, m) - sub * z).try_inverse().expect("invertible");
    let idx: Vec<usize> = a.iter().map(|v| union.iter().position(|u| u == v).unwrap()).collect();
    let mut s = 0.0;
    for &i in &idx {
        for &j in &idx {
            s += inv[(i, j)];
        }
    }
    s / (a.len() * a.len()) as f64
}

fn joined(p: &DMatrix<f64>, a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|&u| b.iter().any(|&v| p[(u, v)] > 0.0 || p[(v, u)] > 0.0))
}

/// Affinity of two clusters from dense inverses; zero without a joining edge.
pub fn dense_affinity(p: &DMatrix<f64>, a: &[usize], b: &[usize], z: f64) -> f64 {
    if !joined(p, a, b) {
        return 0.0;
    }
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    (dense_conditional(p, a, &u, z) - dense_conditional(p, a, a, z))
        + (dense_conditional(p, b, &u, z) - dense_conditional(p, b, b, z))
}

/// Nearest-neighbour initialization with a union-find: every vertex joins
/// its highest-weight out-neighbour (ties to the lower index). Returns
/// clusters sorted by smallest member.
pub fn union_find_init(w: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = w.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], v: usize) -> usize {
        let mut r = v;
        while parent[r] != r {
            r = parent[r];
        }
        let mut x = v;
        while parent[x] != r {
            let next = parent[x];
            parent[x] = r;
            x = next;
        }
        r
    }
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if j != i && w[(i, j)] > 0.0 && best.map_or(true, |(_, bw)| w[(i, j)] > bw) {
                best = Some((j, w[(i, j)]));
            }
        }
        if let Some((j, _)) = best {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Greedy agglomeration that recomputes every pairwise affinity from dense
/// inverses at each step. Returns the merged pairs (by smallest member) and
/// the final clusters.
pub fn reference_pic(w: &DMatrix<f64>, z: f64, target: usize) -> (Vec<(usize, usize)>, Vec<Vec<usize>>) {
    let p = transitions(w);
    let mut clusters = union_find_init(w);
    let mut merges = Vec::new();
    while clusters.len() > target {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let aff = dense_affinity(&p, &clusters[i], &clusters[j], z);
                // Dense inverses leave round-off around exact ties such as
                // several zero affinities; those keep the lexicographic order.
                if best.map_or(true, |(_, _, b)| aff > b + 1e-12 * b.abs().max(1.0)) {
                    best = Some((i, j, aff));
                }
            }
        }
        let (i, j, _) = best.unwrap();
        merges.push((clusters[i][0], clusters[j][0]));
        let b = clusters.remove(j);
        clusters[i].extend(b);
        clusters[i].sort_unstable();
        clusters.sort_by_key(|c| c[0]);
    }
    (merges, clusters)
}

pub fn graph(w: &DMatrix<f64>) -> AffinityGraph {
    AffinityGraph::from_weights(w).expect("valid weights")
}

/// Active centisecond ticks of each speaker; boundaries must lie on the
/// 10 ms grid.
pub fn ticks(ann: &Annotation) -> BTreeMap<String, BTreeSet<i64>> {
    let mut out: BTreeMap<String, BTreeSet<i64>> = BTreeMap::new();
    for s in ann.segments() {
        let a = (s.onset * 100.0).round() as i64;
        let b = (s.offset() * 100.0).round() as i64;
        out.entry(s.speaker.clone()).or_default().extend(a..b);
    }
    out
}

/// Best total co-active time over every one-to-one partial mapping, found
/// by trying every assignment of hypothesis speakers (or none) to each
/// reference speaker.
pub fn brute_force_agreement(reference: &Annotation, hypothesis: &Annotation) -> i64 {
    let r = ticks(reference);
    let h = ticks(hypothesis);
    let rs: Vec<&BTreeSet<i64>> = r.values().collect();
    let hs: Vec<&BTreeSet<i64>> = h.values().collect();
    fn search(rs: &[&BTreeSet<i64>], hs: &[&BTreeSet<i64>], used: &mut Vec<bool>, i: usize) -> i64 {
        if i == rs.len() {
            return 0;
        }
        let mut best = search(rs, hs, used, i + 1);
        for j in 0..hs.len() {
            if !used[j] {
                used[j] = true;
                let gain = rs[i].intersection(hs[j]).count() as i64;
                best = best.max(gain + search(rs, hs, used, i + 1));
                used[j] = false;
            }
        }
        best
    }
    search(&rs, &hs, &mut vec![false; hs.len()], 0)
}

/// Co-active ticks of a given mapping.
pub fn agreement_of(reference: &Annotation, hypothesis: &Annotation, map: &[(String, String)]) -> i64 {
    let r = ticks(reference);
    let h = ticks(hypothesis);
    map.iter()
        .map(|(a, b)| r[a].intersection(&h[b]).count() as i64)
        .sum()
}

/// Random annotation with boundaries on the 10 ms grid.
pub fn random_annotation(rng: &mut impl Rng, rec: &str, speakers: usize, segments: usize) -> Annotation {
    let mut ann = Annotation::new(rec);
    for _ in 0..segments {
        let on = rng.gen_range(0..3000) as f64 / 100.0;
        let dur = rng.gen_range(1..500) as f64 / 100.0;
        let spk = format!("s{}", rng.gen_range(0..speakers));
        ann.push(on, on + dur, &spk).unwrap();
    }
    ann
}

/// Fraction of positions where `labels` agrees with `truth` under the best
/// relabeling, by trying every permutation of the (few) label values.
pub fn permutation_accuracy(truth: &[usize], labels: &[usize]) -> f64 {
    let k = truth.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = truth.iter().zip(labels).filter(|(t, l)| p[**l] == **t).count();
        best = best.max(hits);
    });
    best as f64 / truth.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

/// Samples a state sequence of a two-state HMM with the given self-loop
/// probability and a uniformly drawn first state.
pub fn sample_states(rng: &mut impl Rng, len: usize, loop_probability: f64) -> Vec<usize> {
    let mut s = rng.gen_range(0..2);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(s);
        if !rng.gen_bool(loop_probability) {
            s = 1 - s;
        }
    }
    out
}
