//! Resegmentation of a clustering into the final diarization: VB-HMM over
//! embedding windows, overlap second-speaker assignment and decoding of
//! frame-level speaker posteriors.

mod decode;
mod transform;
mod vbx;

pub use decode::{assign_overlap, decode_posteriors, rasterize_window_posteriors};
pub use transform::{
    interpolate_plda, lda_project, whiten_and_normalize, LdaModel, WhiteningStats, LDA_TAG,
    WHITENING_TAG,
};
pub use vbx::{vbx_resegment, VbxOutput};

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::container::{read_with_sidecar, write_with_sidecar, Container, Sidecar, EMBEDDING_TAG};
use crate::error::{Error, Result};

/// Settings of the VB-HMM resegmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbxConfig {
    /// HMM self-transition probability.
    pub loop_probability: f64,
    /// Output dimension of the LDA projection.
    pub lda_dim: usize,
    /// Weight of the first PLDA model when interpolating two models.
    pub plda_interpolation_alpha: f64,
    pub max_iterations: usize,
    /// Stop once the lower bound improves by less than this.
    pub convergence_tolerance: f64,
    /// Acoustic scaling of the emission log-likelihoods.
    pub fa: f64,
    /// Speaker regularization; the prior is scaled by `fa / fb`.
    pub fb: f64,
    /// Sharpness of the soft initialization from the input partition.
    pub init_smoothing: f64,
}

impl Default for VbxConfig {
    fn default() -> Self {
        VbxConfig {
            loop_probability: 0.8,
            lda_dim: 220,
            plda_interpolation_alpha: 0.5,
            max_iterations: 40,
            convergence_tolerance: 1e-6,
            fa: 1.0,
            fb: 1.0,
            init_smoothing: 7.0,
        }
    }
}

impl VbxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loop_probability > 0.0 && self.loop_probability < 1.0) {
            return Err(Error::Config(format!(
                "loop_probability = {} must lie in (0, 1)",
                self.loop_probability
            )));
        }
        if !(0.0..=1.0).contains(&self.plda_interpolation_alpha) {
            return Err(Error::Config(format!(
                "plda_interpolation_alpha = {} must lie in [0, 1]",
                self.plda_interpolation_alpha
            )));
        }
        if self.lda_dim == 0 || self.max_iterations == 0 {
            return Err(Error::Config("lda_dim and max_iterations must be positive".into()));
        }
        if !(self.convergence_tolerance >= 0.0) {
            return Err(Error::Config("convergence_tolerance must be >= 0".into()));
        }
        if !(self.fa > 0.0 && self.fb > 0.0 && self.init_smoothing >= 0.0) {
            return Err(Error::Config("fa and fb must be > 0, init_smoothing >= 0".into()));
        }
        Ok(())
    }
}

/// Default label of the `index`-th speaker column.
pub fn speaker_label(index: usize) -> String {
    format!("spk{:02}", index + 1)
}

/// Frame-level speaker activity posteriors of one recording.
///
/// Frame `k` covers `[k, k + 1) * frame_shift * subsample_factor` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub recording_id: String,
    values: DMatrix<f64>,
    pub frame_shift: f64,
    pub subsample_factor: usize,
    speakers: Vec<String>,
}

impl PosteriorMatrix {
    /// Columns are labeled with [`speaker_label`] unless `speakers` is given.
    pub fn new(
        recording_id: impl Into<String>,
        values: DMatrix<f64>,
        frame_shift: f64,
        subsample_factor: usize,
        speakers: Option<Vec<String>>,
    ) -> Result<Self> {
        if !(frame_shift > 0.0) || subsample_factor == 0 {
            return Err(Error::invalid("frame_shift must be > 0 and subsample_factor >= 1"));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("posterior {bad} is outside [0, 1]")));
        }
        let speakers = speakers.unwrap_or_else(|| (0..values.ncols()).map(speaker_label).collect());
        if speakers.len() != values.ncols() {
            return Err(Error::invalid("one speaker label per posterior column is required"));
        }
        Ok(PosteriorMatrix {
            recording_id: recording_id.into(),
            values,
            frame_shift,
            subsample_factor,
            speakers,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_speakers(&self) -> usize {
        self.values.ncols()
    }

    /// Seconds covered by one row.
    pub fn frame_duration(&self) -> f64 {
        self.frame_shift * self.subsample_factor as f64
    }

    /// Start time of row `k`, computed from the integer base-frame index so
    /// that equivalent resolutions give identical times.
    pub fn frame_time(&self, k: usize) -> f64 {
        (k * self.subsample_factor) as f64 * self.frame_shift
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = Sidecar::default();
        meta.set("recording_id", &self.recording_id);
        meta.set("frame_shift", self.frame_shift);
        meta.set("subsample_factor", self.subsample_factor);
        meta.set("speakers", self.speakers.join(","));
        write_with_sidecar(path, &Container::from_matrix(EMBEDDING_TAG, &self.values), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (c, meta) = read_with_sidecar(path, EMBEDDING_TAG)?;
        let speakers = meta
            .get_opt("speakers")
            .filter(|s| !s.is_empty())
            .map(|s| s.split(',').map(str::to_string).collect());
        PosteriorMatrix::new(
            meta.get("recording_id")?,
            c.to_matrix(),
            meta.get_f64("frame_shift")?,
            meta.get_usize("subsample_factor")?,
            speakers,
        )
    }
}

/// Time regions of one recording flagged as overlapped speech.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRegions {
    recording_id: String,
    intervals: Vec<(f64, f64)>,
}

impl OverlapRegions {
    pub fn new(recording_id: impl Into<String>, intervals: Vec<(f64, f64)>) -> Result<Self> {
        let regions = crate::annotation::ScoringRegions::new(recording_id, intervals)?;
        Ok(OverlapRegions {
            recording_id: regions.recording_id().to_string(),
            intervals: regions.intervals().to_vec(),
        })
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Parses `OVL <recording> <channel> <onset> <duration>` lines. Blank lines
/// and lines starting with `#` are skipped. Touching or overlapping
/// intervals of one recording are merged.
pub fn parse_overlaps(text: &str) -> Result<Vec<OverlapRegions>> {
    let mut by_rec: std::collections::BTreeMap<String, Vec<(f64, f64)>> = Default::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "OVL" {
            return Err(Error::parse(line_no, "expected 'OVL <rec> <chan> <onset> <dur>'"));
        }
        let onset: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad onset '{}'", fields[3])))?;
        let dur: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad duration '{}'", fields[4])))?;
        if !(onset >= 0.0 && dur > 0.0 && (onset + dur).is_finite()) {
            return Err(Error::parse(line_no, "onset must be >= 0 and duration > 0"));
        }
        by_rec.entry(fields[1].to_string()).or_default().push((onset, onset + dur));
    }
    by_rec
        .into_iter()
        .map(|(rec, iv)| OverlapRegions::new(rec, crate::annotation::union_intervals(iv)))
        .collect()
}

pub fn write_overlaps<'a>(regions: impl IntoIterator<Item = &'a OverlapRegions>) -> String {
    let mut out = String::new();
    for r in regions {
        for &(a, b) in &r.intervals {
            out.push_str(&format!("OVL {} 1 {:.3} {:.3}\n", r.recording_id, a, b - a));
        }
    }
    out
}
