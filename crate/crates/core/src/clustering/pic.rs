//! Path integral clustering.
//!
//! The path integral of a vertex set `C` is
//! `S_C = 1/|C|^2 * 1' (I - z P_C)^-1 1`, the damped sum over all paths that
//! stay inside `C`. Two clusters are merged greedily by their affinity, the
//! summed increments of each cluster's path integral when paths may also
//! pass through the other cluster.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::DMatrix;

use super::{AffinityGraph, Partition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicParams {
    /// Damping of longer paths, in `(0, 1)`.
    pub z: f64,
    /// Neighbour count of the affinity graph.
    pub k: usize,
    pub target_clusters: usize,
}

impl PicParams {
    pub fn new(z: f64, k: usize, target_clusters: usize) -> Result<Self> {
        let p = PicParams {
            z,
            k,
            target_clusters,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z > 0.0 && self.z < 1.0) {
            return Err(Error::invalid(format!("z = {} must lie in (0, 1)", self.z)));
        }
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.target_clusters == 0 {
            return Err(Error::invalid("target cluster count must be at least 1"));
        }
        Ok(())
    }
}

impl Default for PicParams {
    fn default() -> Self {
        PicParams {
            z: 0.01,
            k: 30,
            target_clusters: 1,
        }
    }
}

/// Reusable index map from global vertex ids to positions in a vertex subset.
struct Scratch {
    local: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            local: vec![usize::MAX; n],
        }
    }
}

const NO_GROUP: u8 = u8::MAX;

/// For the vertex set `members` (sorted) and a group tag per member, returns
/// `1_g' (I - z P_U)^-1 1_g` for each group `g` in `0..groups`.
fn group_sums(
    graph: &AffinityGraph,
    z: f64,
    members: &[usize],
    tags: &[u8],
    groups: usize,
    scratch: &mut Scratch,
) -> Result<Vec<f64>> {
    let m = members.len();
    for (li, &v) in members.iter().enumerate() {
        scratch.local[v] = li;
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    let mut nnz = 0;
    for &v in members {
        let row: Vec<(usize, f64)> = graph
            .transition_row(v)
            .iter()
            .filter_map(|&(j, p)| {
                let lj = scratch.local[j];
                (lj != usize::MAX).then_some((lj, p))
            })
            .collect();
        nnz += row.len();
        rows.push(row);
    }
    for &v in members {
        scratch.local[v] = usize::MAX;
    }

    let iters = (36.0 / -z.ln()).ceil() + 2.0;
    let dense_cost = (m * m * m) as f64 / 3.0 + (m * m * groups) as f64;
    let iter_cost = 2.0 * (nnz + m) as f64 * groups as f64 * iters;

    let solutions: Vec<Vec<f64>> = if dense_cost <= iter_cost {
        let mut a = DMatrix::<f64>::identity(m, m);
        for (i, row) in rows.iter().enumerate() {
            for &(j, p) in row {
                a[(i, j)] -= z * p;
            }
        }
        let rhs = DMatrix::from_fn(m, groups, |i, g| if tags[i] as usize == g { 1.0 } else { 0.0 });
        let x = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular path-integral system"))?;
        (0..groups).map(|g| x.column(g).iter().copied().collect()).collect()
    } else {
        let cap = iters as usize * 50 + 100;
        (0..groups)
            .map(|g| {
                let b: Vec<f64> = tags.iter().map(|&t| if t as usize == g { 1.0 } else { 0.0 }).collect();
                let mut x = b.clone();
                let mut next = vec![0.0; m];
                for _ in 0..cap {
                    let mut delta: f64 = 0.0;
                    let mut scale: f64 = 0.0;
                    for (i, row) in rows.iter().enumerate() {
                        let acc: f64 = row.iter().map(|&(j, p)| p * x[j]).sum();
                        let v = b[i] + z * acc;
                        delta = delta.max((v - x[i]).abs());
                        scale = scale.max(v.abs());
                        next[i] = v;
                    }
                    std::mem::swap(&mut x, &mut next);
                    if delta <= 1e-15 * scale {
                        return Ok(x);
                    }
                }
                Err(Error::numerical("path-integral iteration did not converge"))
            })
            .collect::<Result<_>>()?
    };

    Ok((0..groups)
        .map(|g| {
            solutions[g]
                .iter()
                .zip(tags)
                .filter(|(_, &t)| t as usize == g)
                .map(|(x, _)| x)
                .sum()
        })
        .collect())
}

fn sorted_set(graph: &AffinityGraph, c: &[usize], what: &str) -> Result<Vec<usize>> {
    if c.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    let mut v = c.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != c.len() {
        return Err(Error::invalid(format!("{what} has repeated vertices")));
    }
    if *v.last().unwrap() >= graph.len() {
        return Err(Error::invalid(format!("{what} has a vertex out of range")));
    }
    Ok(v)
}

fn path_integral_sorted(graph: &AffinityGraph, c: &[usize], z: f64, scratch: &mut Scratch) -> Result<f64> {
    let tags = vec![0u8; c.len()];
    let s = group_sums(graph, z, c, &tags, 1, scratch)?[0];
    let n = c.len() as f64;
    Ok(s / (n * n))
}

fn check_z(z: f64) -> Result<()> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::invalid(format!("z = {z} must lie in (0, 1)")));
    }
    Ok(())
}

/// Path integral `S_C` of the vertex set `c`.
pub fn path_integral(graph: &AffinityGraph, c: &[usize], z: f64) -> Result<f64> {
    check_z(z)?;
    let c = sorted_set(graph, c, "cluster")?;
    path_integral_sorted(graph, &c, z, &mut Scratch::new(graph.len()))
}

/// Path integral over paths in `union` that start and end in `a`.
pub fn conditional_path_integral(
    graph: &AffinityGraph,
    a: &[usize],
    union: &[usize],
    z: f64,
) -> Result<f64> {
    check_z(z)?;
    let a = sorted_set(graph, a, "cluster")?;
    let u = sorted_set(graph, union, "union")?;
    let tags: Vec<u8> = u
        .iter()
        .map(|v| if a.binary_search(v).is_ok() { 0 } else { NO_GROUP })
        .collect();
    if tags.iter().filter(|&&t| t == 0).count() != a.len() {
        return Err(Error::invalid("cluster is not contained in the union"));
    }
    let s = group_sums(graph, z, &u, &tags, 1, &mut Scratch::new(graph.len()))?[0];
    let n = a.len() as f64;
    Ok(s / (n * n))
}

/// Affinity from cached path integrals. `a` and `b` are sorted, disjoint and
/// joined by at least one edge; `a` holds the smaller vertex.
fn affinity_cached(
    graph: &AffinityGraph,
    z: f64,
    a: &[usize],
    b: &[usize],
    s_a: f64,
    s_b: f64,
    scratch: &mut Scratch,
) -> Result<f64> {
    let mut union = Vec::with_capacity(a.len() + b.len());
    let mut tags = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            union.push(a[i]);
            tags.push(0);
            i += 1;
        } else {
            union.push(b[j]);
            tags.push(1);
            j += 1;
        }
    }
    let sums = group_sums(graph, z, &union, &tags, 2, scratch)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let inc_a = sums[0] / (na * na) - s_a;
    let inc_b = sums[1] / (nb * nb) - s_b;
    Ok(inc_a + inc_b)
}

fn connected(graph: &AffinityGraph, a: &[usize], b: &[usize]) -> bool {
    let crosses = |from: &[usize], to: &[usize]| {
        from.iter().any(|&v| {
            graph
                .transition_row(v)
                .iter()
                .any(|&(j, _)| to.binary_search(&j).is_ok())
        })
    };
    crosses(a, b) || crosses(b, a)
}

/// Affinity of two disjoint clusters: the summed incremental path integrals
/// `[S_{a|a+b} - S_a] + [S_{b|a+b} - S_b]`. Exactly zero when no edge joins them.
pub fn affinity(graph: &AffinityGraph, a: &[usize], b: &[usize], z: f64) -> Result<f64> {
    check_z(z)?;
    let mut a = sorted_set(graph, a, "first cluster")?;
    let mut b = sorted_set(graph, b, "second cluster")?;
    if a.iter().any(|v| b.binary_search(v).is_ok()) {
        return Err(Error::invalid("clusters overlap"));
    }
    if !connected(graph, &a, &b) {
        return Ok(0.0);
    }
    if b[0] < a[0] {
        std::mem::swap(&mut a, &mut b);
    }
    let mut scratch = Scratch::new(graph.len());
    let s_a = path_integral_sorted(graph, &a, z, &mut scratch)?;
    let s_b = path_integral_sorted(graph, &b, z, &mut scratch)?;
    affinity_cached(graph, z, &a, &b, s_a, s_b, &mut scratch)
}

/// Initial clusters: weakly connected components of the graph that links
/// every vertex to its highest-weight neighbour (ties to the lower index).
pub fn init_partition(graph: &AffinityGraph) -> Partition {
    let n = graph.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let row = if graph.weight_row(i).is_empty() {
            graph.transition_row(i)
        } else {
            graph.weight_row(i)
        };
        let mut best: Option<(usize, f64)> = None;
        for &(j, w) in row {
            if best.map_or(true, |(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        if let Some((j, _)) = best {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        labels[start] = next;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if labels[u] == usize::MAX {
                    labels[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    Partition::from_labels(&labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicResult {
    pub partition: Partition,
    pub initial: Partition,
    /// Merged pairs in order, each named by the clusters' smallest vertices.
    pub merges: Vec<(usize, usize)>,
}

/// Agglomerates the nearest-neighbour initialization by maximum affinity
/// until `target_clusters` remain. Ties go to the lexicographically smallest
/// pair of cluster ids (a cluster's id is its smallest vertex).
pub fn pic_cluster(graph: &AffinityGraph, params: &PicParams) -> Result<PicResult> {
    check_z(params.z)?;
    if params.target_clusters == 0 {
        return Err(Error::invalid("target cluster count must be at least 1"));
    }
    let n = graph.len();
    let initial = init_partition(graph);
    if initial.num_clusters() <= params.target_clusters {
        if initial.num_clusters() < params.target_clusters {
            warn!(
                "target of {} clusters exceeds the {} initial clusters; returning the initialization",
                params.target_clusters,
                initial.num_clusters()
            );
        }
        return Ok(PicResult {
            partition: initial.clone(),
            initial,
            merges: Vec::new(),
        });
    }

    let z = params.z;
    let mut scratch = Scratch::new(n);
    let mut members: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut integral = vec![0.0; n];
    let mut owner = vec![0usize; n];
    for c in initial.clusters() {
        let id = c[0];
        for &v in c {
            owner[v] = id;
        }
        integral[id] = path_integral_sorted(graph, c, z, &mut scratch)?;
        members[id] = Some(c.clone());
    }

    let neighbours_of = |id: usize, members: &[Option<Vec<usize>>], owner: &[usize]| {
        let mut out = BTreeSet::new();
        for &v in members[id].as_ref().unwrap() {
            for &(j, _) in graph.transition_row(v) {
                out.insert(owner[j]);
            }
            for &j in graph.incoming(v) {
                out.insert(owner[j]);
            }
        }
        out.remove(&id);
        out
    };

    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for c in initial.clusters() {
        let a = c[0];
        for b in neighbours_of(a, &members, &owner) {
            if b > a {
                let aff = affinity_cached(
                    graph,
                    z,
                    members[a].as_ref().unwrap(),
                    members[b].as_ref().unwrap(),
                    integral[a],
                    integral[b],
                    &mut scratch,
                )?;
                pairs.insert((a, b), aff);
            }
        }
    }

    let mut count = initial.num_clusters();
    let mut merges = Vec::with_capacity(count - params.target_clusters);
    while count > params.target_clusters {
        let mut best: Option<((usize, usize), f64)> = None;
        for (&key, &aff) in &pairs {
            if best.map_or(true, |(_, b)| aff > b) {
                best = Some((key, aff));
            }
        }
        let (a, b) = match best {
            Some((key, aff)) if aff > 0.0 => key,
            // Every remaining pair scores zero or less; choose among all pairs.
            _ => {
                let active: Vec<usize> = (0..n).filter(|&i| members[i].is_some()).collect();
                let mut choice: Option<((usize, usize), f64)> = None;
                for (x, &i) in active.iter().enumerate() {
                    for &j in &active[x + 1..] {
                        let aff = pairs.get(&(i, j)).copied().unwrap_or(0.0);
                        if choice.map_or(true, |(_, c)| aff > c) {
                            choice = Some(((i, j), aff));
                        }
                    }
                }
                choice.expect("at least two clusters remain").0
            }
        };

        let mb = members[b].take().unwrap();
        let ma = members[a].take().unwrap();
        let mut merged = Vec::with_capacity(ma.len() + mb.len());
        merged.extend_from_slice(&ma);
        merged.extend_from_slice(&mb);
        merged.sort_unstable();
        for &v in &mb {
            owner[v] = a;
        }
        pairs.retain(|&(x, y), _| x != a && x != b && y != a && y != b);
        integral[a] = path_integral_sorted(graph, &merged, z, &mut scratch)?;
        members[a] = Some(merged);
        merges.push((a, b));
        count -= 1;

        for c in neighbours_of(a, &members, &owner) {
            let (lo, hi) = if a < c { (a, c) } else { (c, a) };
            let aff = affinity_cached(
                graph,
                z,
                members[lo].as_ref().unwrap(),
                members[hi].as_ref().unwrap(),
                integral[lo],
                integral[hi],
                &mut scratch,
            )?;
            pairs.insert((lo, hi), aff);
        }
    }

    let clusters: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    Ok(PicResult {
        partition: Partition::from_clusters(n, &clusters)?,
        initial,
        merges,
    })
}
