//! Speaker-labeled timelines and the RTTM / UEM text formats.
//!
//! RTTM `SPEAKER` lines carry one segment each:
//!
//! ```text
//! SPEAKER <rec> 1 <onset> <duration> <NA> <NA> <speaker> <NA> <NA>
//! ```
//!
//! The channel field is always written as `1` and ignored on read. UEM lines
//! are `<rec> 1 <onset> <offset>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One speaker turn of a recording, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub recording_id: String,
    pub onset: f64,
    pub duration: f64,
    pub speaker: String,
}

impl Segment {
    pub fn new(
        recording_id: impl Into<String>,
        onset: f64,
        duration: f64,
        speaker: impl Into<String>,
    ) -> Result<Self> {
        if !onset.is_finite() || onset < 0.0 {
            return Err(Error::invalid(format!("segment onset {onset} must be >= 0")));
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(Error::invalid(format!(
                "segment duration {duration} must be > 0"
            )));
        }
        Ok(Segment {
            recording_id: recording_id.into(),
            onset,
            duration,
            speaker: speaker.into(),
        })
    }

    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }
}

/// The segments of one recording, kept sorted by onset (ties by speaker).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    recording_id: String,
    segments: Vec<Segment>,
}

fn segment_order(a: &Segment, b: &Segment) -> std::cmp::Ordering {
    a.onset
        .total_cmp(&b.onset)
        .then_with(|| a.speaker.cmp(&b.speaker))
        .then_with(|| a.duration.total_cmp(&b.duration))
}

impl Annotation {
    pub fn new(recording_id: impl Into<String>) -> Self {
        Annotation {
            recording_id: recording_id.into(),
            segments: Vec::new(),
        }
    }

    /// Builds an annotation from segments that must all belong to `recording_id`.
    pub fn from_segments(recording_id: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let recording_id = recording_id.into();
        if let Some(bad) = segments.iter().find(|s| s.recording_id != recording_id) {
            return Err(Error::invalid(format!(
                "segment of recording '{}' in annotation of '{}'",
                bad.recording_id, recording_id
            )));
        }
        let mut segments = segments;
        segments.sort_by(segment_order);
        Ok(Annotation {
            recording_id,
            segments,
        })
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    /// Adds a segment for `speaker` over `[onset, offset)`. Empty intervals are ignored.
    pub fn push(&mut self, onset: f64, offset: f64, speaker: &str) -> Result<()> {
        if offset <= onset {
            return Ok(());
        }
        let seg = Segment::new(self.recording_id.clone(), onset, offset - onset, speaker)?;
        let at = self
            .segments
            .partition_point(|s| segment_order(s, &seg) != std::cmp::Ordering::Greater);
        self.segments.insert(at, seg);
        Ok(())
    }

    /// Sorted, de-duplicated speaker labels.
    pub fn speakers(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.segments.iter().map(|s| s.speaker.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Latest segment offset, or 0 for an empty annotation.
    pub fn end(&self) -> f64 {
        self.segments
            .iter()
            .map(Segment::offset)
            .fold(0.0, f64::max)
    }

    /// Summed segment durations per speaker (overlapping same-speaker segments count twice).
    pub fn speaker_durations(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for s in &self.segments {
            *out.entry(s.speaker.clone()).or_insert(0.0) += s.duration;
        }
        out
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Union of all segments regardless of speaker, as sorted disjoint intervals.
    pub fn speech_regions(&self) -> Vec<(f64, f64)> {
        union_intervals(self.segments.iter().map(|s| (s.onset, s.offset())))
    }

    /// Replaces every speaker label through `f`.
    pub fn relabel(&self, mut f: impl FnMut(&str) -> String) -> Annotation {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                speaker: f(&s.speaker),
                ..s.clone()
            })
            .collect();
        Annotation::from_segments(self.recording_id.clone(), segments)
            .expect("relabeling keeps the recording id")
    }
}

/// Merges possibly overlapping intervals into sorted disjoint ones.
pub fn union_intervals(intervals: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = intervals.into_iter().filter(|(a, b)| b > a).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Time regions of a recording that are scored (the content of a UEM file).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringRegions {
    recording_id: String,
    intervals: Vec<(f64, f64)>,
}

impl ScoringRegions {
    /// Intervals must be sorted, pairwise disjoint and of positive length.
    pub fn new(recording_id: impl Into<String>, intervals: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(on, off)) in intervals.iter().enumerate() {
            if !(on.is_finite() && off.is_finite()) || off <= on {
                return Err(Error::invalid(format!("region ({on}, {off}) is empty")));
            }
            if i > 0 && on < intervals[i - 1].1 {
                return Err(Error::invalid(format!(
                    "region ({on}, {off}) overlaps or precedes its predecessor"
                )));
            }
        }
        Ok(ScoringRegions {
            recording_id: recording_id.into(),
            intervals,
        })
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn total(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }
}

fn parse_time(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("{what} '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what} '{field}' is not finite")));
    }
    Ok(v)
}

fn is_comment(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with(";;") || t.starts_with('#')
}

/// Parses RTTM text. Only `SPEAKER` lines produce segments; other record
/// types are skipped. The result is grouped by recording id, sorted by id.
pub fn parse_rttm(text: &str) -> Result<Vec<Annotation>> {
    let mut groups: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if is_comment(raw) {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() != 9 && fields.len() != 10 {
            return Err(Error::parse(
                line,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        let onset = parse_time(fields[3], line, "onset")?;
        let duration = parse_time(fields[4], line, "duration")?;
        if onset < 0.0 {
            return Err(Error::parse(line, format!("negative onset {onset}")));
        }
        if duration <= 0.0 {
            return Err(Error::parse(line, format!("non-positive duration {duration}")));
        }
        let rec = fields[1].to_string();
        groups.entry(rec.clone()).or_default().push(Segment {
            recording_id: rec,
            onset,
            duration,
            speaker: fields[7].to_string(),
        });
    }
    Ok(groups
        .into_iter()
        .map(|(rec, segs)| Annotation::from_segments(rec, segs).expect("grouped by id"))
        .collect())
}

/// Formats annotations as RTTM with three decimals for onset and duration.
pub fn write_rttm<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> String {
    let mut out = String::new();
    for ann in annotations {
        for s in &ann.segments {
            writeln!(
                out,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                s.recording_id, s.onset, s.duration, s.speaker
            )
            .unwrap();
        }
    }
    out
}

/// Parses UEM text (`<rec> <channel> <onset> <offset>`), grouped and sorted by id.
/// Overlapping intervals of one recording are merged.
pub fn parse_uem(text: &str) -> Result<Vec<ScoringRegions>> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if is_comment(raw) {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                line,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let on = parse_time(fields[2], line, "onset")?;
        let off = parse_time(fields[3], line, "offset")?;
        if on < 0.0 || off <= on {
            return Err(Error::parse(line, format!("invalid region ({on}, {off})")));
        }
        groups.entry(fields[0].to_string()).or_default().push((on, off));
    }
    groups
        .into_iter()
        .map(|(rec, iv)| ScoringRegions::new(rec, union_intervals(iv)))
        .collect()
}

pub fn write_uem<'a>(regions: impl IntoIterator<Item = &'a ScoringRegions>) -> String {
    let mut out = String::new();
    for r in regions {
        for (on, off) in &r.intervals {
            writeln!(out, "{} 1 {:.3} {:.3}", r.recording_id, on, off).unwrap();
        }
    }
    out
}

/// Fuses same-speaker segments separated by at most `gap` seconds.
/// Overlapping same-speaker segments are always fused.
pub fn merge_adjacent(annotation: &Annotation, gap: f64) -> Annotation {
    let gap = gap.max(0.0);
    let mut by_speaker: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &annotation.segments {
        by_speaker
            .entry(s.speaker.as_str())
            .or_default()
            .push((s.onset, s.offset()));
    }
    let mut segments = Vec::with_capacity(annotation.segments.len());
    for (speaker, mut iv) in by_speaker {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cur = iv[0];
        for &(on, off) in &iv[1..] {
            if on - cur.1 <= gap {
                cur.1 = cur.1.max(off);
            } else {
                segments.push((cur, speaker));
                cur = (on, off);
            }
        }
        segments.push((cur, speaker));
    }
    let segments = segments
        .into_iter()
        .map(|((on, off), spk)| Segment {
            recording_id: annotation.recording_id.clone(),
            onset: on,
            duration: off - on,
            speaker: spk.to_string(),
        })
        .collect();
    Annotation::from_segments(annotation.recording_id.clone(), segments).expect("same recording")
}

/// Restricts every segment to the given regions; zero-length pieces are dropped.
pub fn crop(annotation: &Annotation, regions: &[(f64, f64)]) -> Annotation {
    let mut segments = Vec::new();
    for s in &annotation.segments {
        for &(ron, roff) in regions {
            let on = s.onset.max(ron);
            let off = s.offset().min(roff);
            if off > on {
                segments.push(Segment {
                    recording_id: s.recording_id.clone(),
                    onset: on,
                    duration: off - on,
                    speaker: s.speaker.clone(),
                });
            }
        }
    }
    Annotation::from_segments(annotation.recording_id.clone(), segments).expect("same recording")
}

/// [`crop`] against UEM scoring regions.
pub fn crop_to(annotation: &Annotation, regions: &ScoringRegions) -> Annotation {
    crop(annotation, &regions.intervals)
}
