//! Narrowband/wideband routing from segment-level embeddings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::container::{read_with_sidecar, write_with_sidecar, Container, Sidecar};
use crate::error::{Error, Result};

pub const MLP_TAG: [u8; 4] = *b"MLP1";

/// Recording bandwidth class. Output unit 0 is narrowband, unit 1 wideband.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    Narrowband,
    Wideband,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Narrowband => "NB",
            Band::Wideband => "WB",
        })
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NB" => Ok(Band::Narrowband),
            "WB" => Ok(Band::Wideband),
            other => Err(Error::invalid(format!("unknown band '{other}'"))),
        }
    }
}

/// Two-layer feed-forward classifier with a rectified hidden layer and a
/// two-way softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    /// `D x H`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `H x 2`
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl MlpClassifier {
    pub fn new(w1: DMatrix<f64>, b1: DVector<f64>, w2: DMatrix<f64>, b2: DVector<f64>) -> Result<Self> {
        let h = w1.ncols();
        if b1.len() != h || w2.nrows() != h || w2.ncols() != 2 || b2.len() != 2 {
            return Err(Error::invalid(format!(
                "inconsistent layer shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        let all = w1.iter().chain(b1.iter()).chain(w2.iter()).chain(b2.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid("classifier parameters must be finite"));
        }
        Ok(MlpClassifier { w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    /// Output logits `(NB, WB)`.
    pub fn logits(&self, x: &DVector<f64>) -> Result<[f64; 2]> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "classifier expects dimension {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("classifier input must be finite"));
        }
        let hidden = (self.w1.tr_mul(x) + &self.b1).map(|v| v.max(0.0));
        let out = self.w2.tr_mul(&hidden) + &self.b2;
        Ok([out[0], out[1]])
    }

    /// Parameters are stored flat (`w1`, `b1`, `w2`, `b2`, matrices row-major)
    /// with `input_dim` and `hidden_dim` in the sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut flat: Vec<f64> = Vec::new();
        flat.extend(self.w1.transpose().iter());
        flat.extend(self.b1.iter());
        flat.extend(self.w2.transpose().iter());
        flat.extend(self.b2.iter());
        let m = DMatrix::from_row_slice(1, flat.len(), &flat);
        let mut meta = Sidecar::default();
        meta.set("input_dim", self.input_dim());
        meta.set("hidden_dim", self.hidden_dim());
        write_with_sidecar(path, &Container::from_matrix(MLP_TAG, &m), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (c, meta) = read_with_sidecar(path, MLP_TAG)?;
        let d = meta.get_usize("input_dim")?;
        let h = meta.get_usize("hidden_dim")?;
        let expected = d * h + h + 2 * h + 2;
        if c.data.len() != expected {
            return Err(Error::format(
                12,
                format!("classifier with D={d}, H={h} needs {expected} values, found {}", c.data.len()),
            ));
        }
        let v: Vec<f64> = c.data.iter().map(|&x| f64::from(x)).collect();
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &v[at..at + n];
            at += n;
            s
        };
        let w1 = DMatrix::from_row_slice(d, h, take(d * h));
        let b1 = DVector::from_column_slice(take(h));
        let w2 = DMatrix::from_row_slice(h, 2, take(2 * h));
        let b2 = DVector::from_column_slice(take(2));
        MlpClassifier::new(w1, b1, w2, b2)
    }
}

/// Label and class probabilities `(NB, WB)` of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPrediction {
    pub label: Band,
    pub probabilities: [f64; 2],
}

/// Forward pass and softmax; equal probabilities resolve to wideband.
pub fn classify_segment(model: &MlpClassifier, x: &DVector<f64>) -> Result<SegmentPrediction> {
    let [nb, wb] = model.logits(x)?;
    let p_nb = crate::scoring::sigmoid(nb - wb);
    let probabilities = [p_nb, 1.0 - p_nb];
    let label = if nb > wb { Band::Narrowband } else { Band::Wideband };
    Ok(SegmentPrediction {
        label,
        probabilities,
    })
}

/// Most frequent label; a tie resolves to wideband.
pub fn majority_vote(labels: &[Band]) -> Result<Band> {
    if labels.is_empty() {
        return Err(Error::invalid("majority vote over an empty label list"));
    }
    let nb = labels.iter().filter(|&&l| l == Band::Narrowband).count();
    Ok(if 2 * nb > labels.len() {
        Band::Narrowband
    } else {
        Band::Wideband
    })
}

/// Per-segment and file-level bandwidth of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDecision {
    pub recording_id: String,
    pub segment_labels: Vec<Band>,
    pub file_label: Band,
}

/// Classifies every row of `segments` and votes on the file label.
pub fn classify_recording(
    model: &MlpClassifier,
    recording_id: &str,
    segments: &DMatrix<f64>,
) -> Result<BandDecision> {
    let segment_labels = segments
        .row_iter()
        .map(|r| classify_segment(model, &r.transpose()).map(|p| p.label))
        .collect::<Result<Vec<_>>>()?;
    let file_label = majority_vote(&segment_labels)?;
    Ok(BandDecision {
        recording_id: recording_id.to_string(),
        segment_labels,
        file_label,
    })
}
