//! Per-recording embedding sequences and their window timing.

use std::path::Path;

use nalgebra::DMatrix;

use crate::container::{read_with_sidecar, write_with_sidecar, Container, Sidecar, EMBEDDING_TAG};
use crate::error::{Error, Result};

const TIME_EPS: f64 = 1e-9;

/// Sliding windows `[i*shift, i*shift + size)` over `[0, duration]`.
///
/// The last window is the largest `i` with `i*shift + size <= duration + shift/2`;
/// its offset is clipped to `duration`.
pub fn window_times(duration: f64, size: f64, shift: f64) -> Result<Vec<(f64, f64)>> {
    if !(size > 0.0 && shift > 0.0) {
        return Err(Error::invalid("window size and shift must be positive"));
    }
    if duration + TIME_EPS < size {
        return Err(Error::invalid(format!(
            "recording of {duration} s is shorter than one {size} s window"
        )));
    }
    let last = ((duration + shift / 2.0 - size) / shift + TIME_EPS).floor() as usize;
    Ok((0..=last)
        .map(|i| {
            let on = i as f64 * shift;
            (on, (on + size).min(duration))
        })
        .collect())
}

/// Windows laid independently inside each speech region. A region shorter
/// than one window gets a single window covering the whole region.
pub fn speech_windows(regions: &[(f64, f64)], size: f64, shift: f64) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for &(on, off) in regions {
        let len = off - on;
        if len <= 0.0 {
            continue;
        }
        if len + TIME_EPS < size {
            out.push((on, off));
        } else {
            out.extend(
                window_times(len, size, shift)?
                    .into_iter()
                    .map(|(a, b)| (on + a, (on + b).min(off))),
            );
        }
    }
    Ok(out)
}

/// Embeddings of one recording, one row per analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub recording_id: String,
    vectors: DMatrix<f32>,
    pub window_size: f64,
    pub window_shift: f64,
    pub recording_duration: f64,
    speech_regions: Vec<(f64, f64)>,
    windows: Vec<(f64, f64)>,
}

impl EmbeddingSequence {
    /// `speech_regions` of `None` windows the whole recording.
    pub fn new(
        recording_id: impl Into<String>,
        vectors: DMatrix<f32>,
        window_size: f64,
        window_shift: f64,
        recording_duration: f64,
        speech_regions: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::invalid("embedding matrix must be non-empty"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding matrix contains non-finite values"));
        }
        let speech_regions = speech_regions.unwrap_or_else(|| vec![(0.0, recording_duration)]);
        let windows = speech_windows(&speech_regions, window_size, window_shift)?;
        if windows.len() != vectors.nrows() {
            return Err(Error::invalid(format!(
                "{} embeddings but the window layout yields {} windows",
                vectors.nrows(),
                windows.len()
            )));
        }
        Ok(EmbeddingSequence {
            recording_id: recording_id.into(),
            vectors,
            window_size,
            window_shift,
            recording_duration,
            speech_regions,
            windows,
        })
    }

    pub fn vectors(&self) -> &DMatrix<f32> {
        &self.vectors
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.vectors.map(|v| v as f64)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn windows(&self) -> &[(f64, f64)] {
        &self.windows
    }

    pub fn speech_regions(&self) -> &[(f64, f64)] {
        &self.speech_regions
    }

    /// Time span attributed to each window: consecutive windows inside one
    /// region are split at the midpoint of their centres; the first and last
    /// windows of a region extend to the region edges.
    pub fn window_spans(&self) -> Vec<(f64, f64)> {
        let mut spans = Vec::with_capacity(self.windows.len());
        let mut w = 0;
        for &(ron, roff) in &self.speech_regions {
            let start = w;
            while w < self.windows.len() && self.windows[w].0 < roff - TIME_EPS {
                w += 1;
            }
            if w == start {
                continue;
            }
            let centres: Vec<f64> = self.windows[start..w]
                .iter()
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            for i in 0..centres.len() {
                let on = if i == 0 {
                    ron
                } else {
                    0.5 * (centres[i - 1] + centres[i])
                };
                let off = if i + 1 == centres.len() {
                    roff
                } else {
                    0.5 * (centres[i] + centres[i + 1])
                };
                spans.push((on, off));
            }
        }
        spans
    }
}

fn format_regions(regions: &[(f64, f64)]) -> String {
    regions
        .iter()
        .map(|(a, b)| format!("{a}-{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_regions(text: &str) -> Result<Vec<(f64, f64)>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once('-')
                .ok_or_else(|| Error::invalid(format!("bad speech region '{pair}'")))?;
            let a: f64 = a.trim().parse().map_err(|_| Error::invalid(format!("bad onset '{a}'")))?;
            let b: f64 = b.trim().parse().map_err(|_| Error::invalid(format!("bad offset '{b}'")))?;
            Ok((a, b))
        })
        .collect()
}

/// Writes `<path>` (EMB1 payload) and `<path>.meta`.
pub fn write_embeddings(seq: &EmbeddingSequence, path: &Path) -> Result<()> {
    let v = seq.vectors();
    let mut data = Vec::with_capacity(v.len());
    for r in 0..v.nrows() {
        data.extend(v.row(r).iter().copied());
    }
    let container = Container::new(EMBEDDING_TAG, v.nrows(), v.ncols(), data)?;
    let mut meta = Sidecar::default();
    meta.set("recording_id", &seq.recording_id);
    meta.set("window_size", seq.window_size);
    meta.set("window_shift", seq.window_shift);
    meta.set("recording_duration", seq.recording_duration);
    meta.set("dim", v.ncols());
    meta.set("speech_regions", format_regions(&seq.speech_regions));
    write_with_sidecar(path, &container, &meta)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSequence> {
    let (c, meta) = read_with_sidecar(path, EMBEDDING_TAG)?;
    let dim = meta.get_usize("dim")?;
    if dim != c.cols {
        return Err(Error::format(
            8,
            format!("payload has {} columns, sidecar says dim {dim}", c.cols),
        ));
    }
    let regions = match meta.get_opt("speech_regions") {
        Some(text) => Some(parse_regions(text)?),
        None => None,
    };
    EmbeddingSequence::new(
        meta.get("recording_id")?,
        DMatrix::from_row_slice(c.rows, c.cols, &c.data),
        meta.get_f64("window_size")?,
        meta.get_f64("window_shift")?,
        meta.get_f64("recording_duration")?,
        regions,
    )
}
