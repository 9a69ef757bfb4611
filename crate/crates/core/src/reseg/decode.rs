//! Conversion between window-level and frame-level speaker activity.

use nalgebra::DMatrix;

use super::{OverlapRegions, PosteriorMatrix};
use crate::annotation::{crop, union_intervals, Annotation};
use crate::error::{Error, Result};

/// Spreads window-level responsibilities onto a regular frame grid: each
/// frame takes the row of the window span containing its centre, or zeros
/// outside every span.
pub fn rasterize_window_posteriors(
    recording_id: &str,
    spans: &[(f64, f64)],
    responsibilities: &DMatrix<f64>,
    duration: f64,
    frame_shift: f64,
    speakers: Option<Vec<String>>,
) -> Result<PosteriorMatrix> {
    if spans.len() != responsibilities.nrows() {
        return Err(Error::invalid("one window span per responsibility row is required"));
    }
    if !(frame_shift > 0.0) || !(duration >= 0.0) {
        return Err(Error::invalid("frame_shift must be > 0 and duration >= 0"));
    }
    let frames = (duration / frame_shift - 1e-9).ceil().max(0.0) as usize;
    let s = responsibilities.ncols();
    let mut values = DMatrix::zeros(frames, s);
    let mut w = 0;
    for k in 0..frames {
        let centre = (k as f64 + 0.5) * frame_shift;
        while w < spans.len() && spans[w].1 <= centre {
            w += 1;
        }
        if w < spans.len() && spans[w].0 <= centre {
            for j in 0..s {
                values[(k, j)] = responsibilities[(w, j)].clamp(0.0, 1.0);
            }
        }
    }
    PosteriorMatrix::new(recording_id, values, frame_shift, 1, speakers)
}

/// Parts of `(on, off)` not covered by the sorted disjoint `covered` intervals.
fn uncovered(on: f64, off: f64, covered: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cursor = on;
    for &(a, b) in covered {
        if b <= cursor {
            continue;
        }
        if a >= off {
            break;
        }
        if a > cursor {
            out.push((cursor, a));
        }
        cursor = cursor.max(b);
        if cursor >= off {
            break;
        }
    }
    if cursor < off {
        out.push((cursor, off));
    }
    out
}

/// Makes the two speakers with the highest average posterior inside each
/// overlap region active over the whole region. Existing segments are kept
/// as they are; only the uncovered parts of the region are added for each of
/// the two speakers. Regions with fewer than two speakers of non-zero
/// average posterior are left unchanged with a warning.
pub fn assign_overlap(
    annotation: &Annotation,
    posteriors: &PosteriorMatrix,
    overlaps: &OverlapRegions,
) -> Annotation {
    let mut out = annotation.clone();
    let frames = posteriors.num_frames();
    let dur = posteriors.frame_duration();
    for &(on, off) in overlaps.intervals() {
        let mut rows: Vec<usize> = (0..frames)
            .filter(|&k| {
                let c = posteriors.frame_time(k) + 0.5 * dur;
                c >= on && c < off
            })
            .collect();
        if rows.is_empty() {
            rows = (0..frames)
                .filter(|&k| {
                    let t = posteriors.frame_time(k);
                    t < off && t + dur > on
                })
                .collect();
        }
        let mut ranked: Vec<(f64, usize)> = (0..posteriors.num_speakers())
            .map(|j| {
                let sum: f64 = rows.iter().map(|&k| posteriors.values()[(k, j)]).sum();
                (sum / rows.len().max(1) as f64, j)
            })
            .filter(|&(avg, _)| avg > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if ranked.len() < 2 {
            log::warn!(
                "{}: overlap region {on:.3}-{off:.3} has fewer than two speakers; left unchanged",
                overlaps.recording_id()
            );
            continue;
        }
        for &(_, j) in &ranked[..2] {
            let label = &posteriors.speakers()[j];
            let covered = union_intervals(
                out.segments()
                    .iter()
                    .filter(|s| &s.speaker == label)
                    .map(|s| (s.onset, s.offset())),
            );
            for (a, b) in uncovered(on, off, &covered) {
                out.push(a, b, label).expect("pieces of a valid region are valid segments");
            }
        }
    }
    out
}

/// Turns frame posteriors into segments.
///
/// Speakers at or above `threshold` are active. A frame touching SAD speech
/// with no active speaker gets its highest-posterior speaker (ties to the
/// lower column). Frames outside SAD are silenced. Each speaker track is then
/// median-filtered over `median_window` frames (odd, edges replicated),
/// expanded to segments at `frame_shift * subsample_factor` resolution and
/// finally cropped to the SAD regions.
pub fn decode_posteriors(
    post: &PosteriorMatrix,
    threshold: f64,
    sad: &Annotation,
    median_window: usize,
) -> Result<Annotation> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} must lie in (0, 1)")));
    }
    if median_window % 2 == 0 {
        return Err(Error::invalid(format!("median window {median_window} must be odd")));
    }
    let (frames, speakers) = post.values().shape();
    let regions = sad.speech_regions();

    let mut in_sad = vec![false; frames];
    let mut r = 0;
    for (k, flag) in in_sad.iter_mut().enumerate() {
        let (t0, t1) = (post.frame_time(k), post.frame_time(k + 1));
        while r < regions.len() && regions[r].1 <= t0 {
            r += 1;
        }
        *flag = r < regions.len() && regions[r].0 < t1;
    }

    let v = post.values();
    let mut active = DMatrix::from_fn(frames, speakers, |k, j| in_sad[k] && v[(k, j)] >= threshold);
    for k in 0..frames {
        if in_sad[k] && speakers > 0 && !(0..speakers).any(|j| active[(k, j)]) {
            let mut best = 0;
            for j in 1..speakers {
                if v[(k, j)] > v[(k, best)] {
                    best = j;
                }
            }
            active[(k, best)] = true;
        }
    }

    let half = median_window / 2;
    let mut out = Annotation::new(post.recording_id.clone());
    for j in 0..speakers {
        let track: Vec<bool> = (0..frames).map(|k| active[(k, j)]).collect();
        let smoothed: Vec<bool> = if half == 0 {
            track
        } else {
            (0..frames)
                .map(|k| {
                    let on = (0..median_window)
                        .filter(|&o| {
                            let idx = (k + o).saturating_sub(half).min(frames - 1);
                            track[idx]
                        })
                        .count();
                    on > half
                })
                .collect()
        };
        let label = &post.speakers()[j];
        let mut k = 0;
        while k < frames {
            if !smoothed[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k < frames && smoothed[k] {
                k += 1;
            }
            out.push(post.frame_time(start), post.frame_time(k), label)?;
        }
    }
    Ok(crop(&out, &regions))
}
