//! Diarization and Jaccard error rates on a 10 ms frame grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::annotation::{Annotation, ScoringRegions};
use crate::error::{Error, Result};

/// Scoring frame length in seconds.
pub const FRAME: f64 = 0.01;

/// Grid index of time `t`; halves round up.
pub fn frame_index(t: f64) -> usize {
    (t / FRAME + 0.5).floor().max(0.0) as usize
}

/// Scoring options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringOptions {
    /// Seconds excluded on either side of every reference boundary.
    pub collar: f64,
    /// Score frames where more than one reference speaker talks.
    pub score_overlap: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            collar: 0.0,
            score_overlap: true,
        }
    }
}

/// Error breakdown of one recording, or of a corpus when `recording_id` is `ALL`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerReport {
    pub recording_id: String,
    /// Reference speaker time in scored frames, seconds.
    pub scored_speech: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    /// Undefined when there is no scored speech.
    pub der: Option<f64>,
    /// Undefined when no reference speaker is scored.
    pub jer: Option<f64>,
    /// Reference to hypothesis label pairs.
    pub speaker_map: Vec<(String, String)>,
}

impl DerReport {
    pub fn error_time(&self) -> f64 {
        self.missed + self.false_alarm + self.confusion
    }
}

/// Per-speaker frame activity over a common grid.
struct Raster {
    labels: Vec<String>,
    active: Vec<Vec<bool>>,
}

fn raster(ann: &Annotation, frames: usize) -> Raster {
    let labels = ann.speakers();
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut active = vec![vec![false; frames]; labels.len()];
    for s in ann.segments() {
        let row = &mut active[index[s.speaker.as_str()]];
        let (a, b) = (frame_index(s.onset).min(frames), frame_index(s.offset()).min(frames));
        row[a..b].iter_mut().for_each(|f| *f = true);
    }
    Raster { labels, active }
}

fn grid_len(reference: &Annotation, hypothesis: &Annotation, regions: Option<&ScoringRegions>) -> usize {
    let mut end = reference.end().max(hypothesis.end());
    if let Some(r) = regions {
        end = end.max(r.intervals().last().map_or(0.0, |iv| iv.1));
    }
    frame_index(end)
}

/// Maximum-weight assignment on a rectangular non-negative integer matrix.
/// Returns the optimal total and, per row, the assigned column.
fn hungarian(w: &[Vec<i64>], cols: usize) -> (i64, Vec<Option<usize>>) {
    let rows = w.len();
    let n = rows.max(cols);
    if n == 0 {
        return (0, Vec::new());
    }
    let max = w.iter().flatten().copied().max().unwrap_or(0);
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            max - w[i][j]
        } else {
            max
        }
    };
    // Potentials-based shortest augmenting path, 1-indexed.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    let mut total = 0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
            total += w[i - 1][j - 1];
        }
    }
    (total, assignment)
}

/// Optimal assignment value of the submatrix of allowed rows and columns.
fn best_value(w: &[Vec<i64>], rows: &[usize], cols: &[usize]) -> i64 {
    let sub: Vec<Vec<i64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| w[r][c]).collect())
        .collect();
    hungarian(&sub, cols.len()).0
}

/// Among all optimal assignments, picks the one that maps each row, in
/// order, to the smallest possible column. Only positive-weight pairs are
/// returned.
fn lexicographic_optimum(w: &[Vec<i64>], cols: usize) -> Vec<Option<usize>> {
    let rows = w.len();
    let mut free_rows: Vec<usize> = (0..rows).collect();
    let mut free_cols: Vec<usize> = (0..cols).collect();
    let mut target = best_value(w, &free_rows, &free_cols);
    let mut out = vec![None; rows];
    for r in 0..rows {
        free_rows.retain(|&x| x != r);
        let mut chosen = None;
        for &c in &free_cols {
            if w[r][c] <= 0 {
                continue;
            }
            let rest: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            if w[r][c] + best_value(w, &free_rows, &rest) == target {
                chosen = Some(c);
                break;
            }
        }
        if let Some(c) = chosen {
            out[r] = Some(c);
            target -= w[r][c];
            free_cols.retain(|&x| x != c);
        }
    }
    out
}

fn mapping_on(reference: &Raster, hypothesis: &Raster, mask: &[bool]) -> Vec<Option<usize>> {
    let w: Vec<Vec<i64>> = reference
        .active
        .iter()
        .map(|r| {
            hypothesis
                .active
                .iter()
                .map(|h| (0..mask.len()).filter(|&k| mask[k] && r[k] && h[k]).count() as i64)
                .collect()
        })
        .collect();
    lexicographic_optimum(&w, hypothesis.labels.len())
}

/// One-to-one speaker mapping maximizing the total co-active time. Ties
/// between optimal mappings go to the lexicographically smallest choice,
/// reference speakers taken in sorted order. Pairs that never overlap are
/// left unmapped.
pub fn optimal_mapping(reference: &Annotation, hypothesis: &Annotation) -> Vec<(String, String)> {
    let frames = grid_len(reference, hypothesis, None);
    let (r, h) = (raster(reference, frames), raster(hypothesis, frames));
    named_map(&r, &h, &mapping_on(&r, &h, &vec![true; frames]))
}

fn named_map(r: &Raster, h: &Raster, map: &[Option<usize>]) -> Vec<(String, String)> {
    map.iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (r.labels[i].clone(), h.labels[j].clone())))
        .collect()
}

/// Scored-frame mask: inside the regions (everything when absent), outside
/// the collars and, unless overlap is scored, with at most one reference
/// speaker.
fn scored_mask(
    reference: &Annotation,
    r: &Raster,
    frames: usize,
    regions: Option<&ScoringRegions>,
    options: &ScoringOptions,
) -> Vec<bool> {
    let mut mask = match regions {
        None => vec![true; frames],
        Some(reg) => {
            let mut m = vec![false; frames];
            for &(a, b) in reg.intervals() {
                let (a, b) = (frame_index(a).min(frames), frame_index(b).min(frames));
                m[a..b].iter_mut().for_each(|f| *f = true);
            }
            m
        }
    };
    if options.collar > 0.0 {
        for s in reference.segments() {
            for t in [s.onset, s.offset()] {
                let a = frame_index((t - options.collar).max(0.0)).min(frames);
                let b = frame_index(t + options.collar).min(frames);
                mask[a..b].iter_mut().for_each(|f| *f = false);
            }
        }
    }
    if !options.score_overlap {
        for (k, m) in mask.iter_mut().enumerate() {
            if r.active.iter().filter(|row| row[k]).count() > 1 {
                *m = false;
            }
        }
    }
    mask
}

fn jer_on(r: &Raster, h: &Raster, map: &[Option<usize>], mask: &[bool]) -> Option<f64> {
    let mut errors = Vec::new();
    for (i, row) in r.active.iter().enumerate() {
        let ref_frames = (0..mask.len()).filter(|&k| mask[k] && row[k]).count();
        if ref_frames == 0 {
            continue;
        }
        let e = match map[i] {
            None => 1.0,
            Some(j) => {
                let hyp = &h.active[j];
                let inter = (0..mask.len()).filter(|&k| mask[k] && row[k] && hyp[k]).count();
                let union = (0..mask.len()).filter(|&k| mask[k] && (row[k] || hyp[k])).count();
                1.0 - inter as f64 / union as f64
            }
        };
        errors.push(e);
    }
    (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Frame-level DER and JER of `hypothesis` against `reference`.
pub fn der(
    reference: &Annotation,
    hypothesis: &Annotation,
    regions: Option<&ScoringRegions>,
    options: &ScoringOptions,
) -> Result<DerReport> {
    if !(options.collar >= 0.0) {
        return Err(Error::invalid(format!("collar {} must be >= 0", options.collar)));
    }
    let frames = grid_len(reference, hypothesis, regions);
    let r = raster(reference, frames);
    let h = raster(hypothesis, frames);
    let mask = scored_mask(reference, &r, frames, regions, options);
    let map = mapping_on(&r, &h, &mask);

    let (mut scored, mut missed, mut fa, mut conf) = (0usize, 0usize, 0usize, 0usize);
    for k in (0..frames).filter(|&k| mask[k]) {
        let nr = r.active.iter().filter(|row| row[k]).count();
        let nh = h.active.iter().filter(|row| row[k]).count();
        let correct = map
            .iter()
            .enumerate()
            .filter(|(i, m)| r.active[*i][k] && m.is_some_and(|j| h.active[j][k]))
            .count();
        scored += nr;
        missed += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        conf += nr.min(nh) - correct;
    }
    Ok(DerReport {
        recording_id: reference.recording_id().to_string(),
        scored_speech: scored as f64 * FRAME,
        missed: missed as f64 * FRAME,
        false_alarm: fa as f64 * FRAME,
        confusion: conf as f64 * FRAME,
        der: (scored > 0).then(|| (missed + fa + conf) as f64 / scored as f64),
        jer: jer_on(&r, &h, &map, &mask),
        speaker_map: named_map(&r, &h, &map),
    })
}

/// Jaccard error rate over all frames, without collar.
pub fn jer(reference: &Annotation, hypothesis: &Annotation) -> Option<f64> {
    let frames = grid_len(reference, hypothesis, None);
    let (r, h) = (raster(reference, frames), raster(hypothesis, frames));
    let mask = vec![true; frames];
    let map = mapping_on(&r, &h, &mask);
    jer_on(&r, &h, &map, &mask)
}

/// Pools reports into an `ALL` report: DER from summed error and scored
/// time, JER as the mean of defined per-recording values. With `include`,
/// only the listed recordings take part.
pub fn aggregate(reports: &[DerReport], include: Option<&BTreeSet<String>>) -> Result<DerReport> {
    let chosen: Vec<&DerReport> = reports
        .iter()
        .filter(|r| include.map_or(true, |set| set.contains(&r.recording_id)))
        .collect();
    if chosen.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let scored: f64 = chosen.iter().map(|r| r.scored_speech).sum();
    let missed: f64 = chosen.iter().map(|r| r.missed).sum();
    let false_alarm: f64 = chosen.iter().map(|r| r.false_alarm).sum();
    let confusion: f64 = chosen.iter().map(|r| r.confusion).sum();
    let jers: Vec<f64> = chosen.iter().filter_map(|r| r.jer).collect();
    Ok(DerReport {
        recording_id: "ALL".to_string(),
        scored_speech: scored,
        missed,
        false_alarm,
        confusion,
        der: (scored > 0.0).then(|| (missed + false_alarm + confusion) / scored),
        jer: (!jers.is_empty()).then(|| jers.iter().sum::<f64>() / jers.len() as f64),
        speaker_map: Vec::new(),
    })
}

/// Per-domain summary: file count, mean of per-file DERs, pooled DER.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSummary {
    pub domain: String,
    pub files: usize,
    pub mean_der: Option<f64>,
    pub pooled: DerReport,
}

/// Groups reports by the domain of each recording. Recordings missing from
/// the map are skipped.
pub fn domain_breakdown(reports: &[DerReport], domains: &BTreeMap<String, String>) -> Vec<DomainSummary> {
    let mut groups: BTreeMap<&str, Vec<DerReport>> = BTreeMap::new();
    for r in reports {
        if let Some(d) = domains.get(&r.recording_id) {
            groups.entry(d.as_str()).or_default().push(r.clone());
        }
    }
    groups
        .into_iter()
        .map(|(domain, rs)| {
            let ders: Vec<f64> = rs.iter().filter_map(|r| r.der).collect();
            DomainSummary {
                domain: domain.to_string(),
                files: rs.len(),
                mean_der: (!ders.is_empty()).then(|| ders.iter().sum::<f64>() / ders.len() as f64),
                pooled: aggregate(&rs, None).expect("groups are non-empty"),
            }
        })
        .collect()
}

fn ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.4}", x))
}

/// Aligned text table: one row per report, then the `ALL` row.
pub fn format_table(reports: &[DerReport], all: &DerReport) -> String {
    let rows: Vec<[String; 7]> = reports
        .iter()
        .chain(std::iter::once(all))
        .map(|r| {
            [
                r.recording_id.clone(),
                format!("{:.2}", r.scored_speech),
                format!("{:.2}", r.missed),
                format!("{:.2}", r.false_alarm),
                format!("{:.2}", r.confusion),
                ratio(r.der),
                ratio(r.jer),
            ]
        })
        .collect();
    let header = ["recording", "scored", "miss", "fa", "conf", "der", "jer"];
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let mut parts = Vec::new();
        for (i, c) in cells.iter().enumerate() {
            parts.push(if i == 0 {
                format!("{:<w$}", c, w = width[0])
            } else {
                format!("{:>w$}", c, w = width[i])
            });
        }
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&header);
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Tab-separated report with a header line and the `ALL` row last.
pub fn format_tsv(reports: &[DerReport], all: &DerReport) -> String {
    let mut out = String::from("recording\tscored\tmiss\tfa\tconf\tder\tjer\n");
    for r in reports.iter().chain(std::iter::once(all)) {
        let _ = writeln!(
            out,
            "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}",
            r.recording_id,
            r.scored_speech,
            r.missed,
            r.false_alarm,
            r.confusion,
            ratio(r.der),
            ratio(r.jer)
        );
    }
    out
}

/// Aligned per-domain table.
pub fn format_domain_table(summaries: &[DomainSummary]) -> String {
    let width = summaries.iter().map(|s| s.domain.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>5}  {:>8}  {:>10}\n", "domain", "files", "mean_der", "pooled_der");
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>8}  {:>10}",
            s.domain,
            s.files,
            ratio(s.mean_der),
            ratio(s.pooled.der)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(segs: &[(f64, f64, &str)]) -> Annotation {
        let mut a = Annotation::new("r");
        for &(on, off, s) in segs {
            a.push(on, off, s).unwrap();
        }
        a
    }

    #[test]
    fn identical_is_perfect() {
        let r = ann(&[(0.0, 5.0, "A"), (4.0, 9.0, "B")]);
        let rep = der(&r, &r, None, &ScoringOptions::default()).unwrap();
        assert_eq!(rep.der, Some(0.0));
        assert_eq!(rep.jer, Some(0.0));
    }

    #[test]
    fn empty_hypothesis_misses_everything() {
        let r = ann(&[(0.0, 10.0, "A")]);
        let rep = der(&r, &Annotation::new("r"), None, &ScoringOptions::default()).unwrap();
        assert!((rep.missed - 10.0).abs() < 1e-9);
        assert_eq!(rep.der, Some(1.0));
        assert_eq!(jer(&r, &Annotation::new("r")), Some(1.0));
    }

    #[test]
    fn one_second_of_confusion() {
        let r = ann(&[(0.0, 10.0, "spkA")]);
        let h = ann(&[(0.0, 9.0, "spkA"), (9.0, 10.0, "spkB")]);
        let rep = der(&r, &h, None, &ScoringOptions::default()).unwrap();
        assert!((rep.confusion - 1.0).abs() < 1e-9);
        assert!((rep.der.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn half_coverage_jer() {
        let r = ann(&[(0.0, 10.0, "spkA")]);
        let h = ann(&[(0.0, 5.0, "spkA")]);
        assert!((jer(&r, &h).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_speech_is_undefined() {
        let rep = der(&Annotation::new("r"), &Annotation::new("r"), None, &ScoringOptions::default()).unwrap();
        assert_eq!(rep.der, None);
        assert_eq!(rep.jer, None);
    }

    #[test]
    fn renaming_is_recovered() {
        let r = ann(&[(0.0, 3.0, "A"), (3.0, 5.0, "B")]);
        let h = r.relabel(|s| if s == "A" { "x".into() } else { "y".into() });
        assert_eq!(optimal_mapping(&r, &h), vec![("A".into(), "x".into()), ("B".into(), "y".into())]);
    }

    #[test]
    fn disjoint_speakers_stay_unmapped() {
        let r = ann(&[(0.0, 1.0, "A")]);
        let h = ann(&[(2.0, 3.0, "B")]);
        assert!(optimal_mapping(&r, &h).is_empty());
    }

    #[test]
    fn hungarian_matches_hand_optimum() {
        let w = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let (v, a) = hungarian(&w, 3);
        assert_eq!(v, 4 + 5 + 2);
        assert_eq!(a, vec![Some(0), Some(2), Some(1)]);
        assert_eq!(hungarian(&[vec![1, 7]], 2).0, 7);
        assert_eq!(hungarian(&[vec![1], vec![7]], 1).0, 7);
    }

    #[test]
    fn collar_and_overlap_exclusion() {
        let r = ann(&[(0.0, 10.0, "A")]);
        let h = ann(&[(0.0, 9.5, "A")]);
        let strict = der(&r, &h, None, &ScoringOptions::default()).unwrap();
        let loose = der(&r, &h, None, &ScoringOptions { collar: 0.5, score_overlap: true }).unwrap();
        assert!(loose.der.unwrap() < strict.der.unwrap());
        assert_eq!(loose.der, Some(0.0));

        let r = ann(&[(0.0, 2.0, "A"), (1.0, 2.0, "B")]);
        let h = ann(&[(0.0, 2.0, "A")]);
        let no_ovl = der(&r, &h, None, &ScoringOptions { collar: 0.0, score_overlap: false }).unwrap();
        assert_eq!(no_ovl.der, Some(0.0));
    }

    #[test]
    fn uem_restricts_scoring() {
        let r = ann(&[(0.0, 10.0, "A")]);
        let h = ann(&[(0.0, 5.0, "A")]);
        let uem = ScoringRegions::new("r", vec![(0.0, 5.0)]).unwrap();
        let rep = der(&r, &h, Some(&uem), &ScoringOptions::default()).unwrap();
        assert_eq!(rep.der, Some(0.0));
        assert!((rep.scored_speech - 5.0).abs() < 1e-9);
    }

    #[test]
    fn pooled_aggregate() {
        let mk = |id: &str, err: f64| DerReport {
            recording_id: id.into(),
            scored_speech: 10.0,
            missed: err,
            false_alarm: 0.0,
            confusion: 0.0,
            der: Some(err / 10.0),
            jer: Some(err / 10.0),
            speaker_map: vec![],
        };
        let reps = vec![mk("a", 1.0), mk("b", 3.0)];
        let all = aggregate(&reps, None).unwrap();
        assert!((all.der.unwrap() - 0.2).abs() < 1e-12);
        let only_a: BTreeSet<String> = ["a".to_string()].into();
        assert!((aggregate(&reps, Some(&only_a)).unwrap().der.unwrap() - 0.1).abs() < 1e-12);
        let single = aggregate(&reps[..1], None).unwrap();
        assert_eq!(single.der, reps[0].der);
        assert!(format_tsv(&reps, &all).lines().count() == 4);
        assert!(format_table(&reps, &all).contains("ALL"));
    }
}
