//! Synthetic corpora with known ground truth: speaker turns, window
//! embeddings drawn from a two-covariance speaker model, frame posteriors
//! for narrowband recordings and the model files the pipeline expects.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::annotation::{union_intervals, write_rttm, write_uem, Annotation, ScoringRegions};
use crate::bandwidth::{Band, MlpClassifier};
use crate::embeddings::{speech_windows, window_times, write_embeddings, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, row_mean, sorted_symmetric_eigen, symmetrize};
use crate::pipeline::{PipelineConfig, ScoringKind};
use crate::reseg::{lda_project, whiten_and_normalize, write_overlaps, LdaModel, OverlapRegions, PosteriorMatrix, WhiteningStats};
use crate::scoring::{fit_pca, PcaTarget, PldaModel};

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Wideband recordings with window embeddings.
    pub recordings: usize,
    /// Narrowband two-speaker recordings with frame posteriors.
    pub nb_recordings: usize,
    pub min_speakers: usize,
    pub max_speakers: usize,
    /// Seconds per recording.
    pub duration: f64,
    pub dim: usize,
    /// Rank of the speaker subspace.
    pub speaker_rank: usize,
    /// Expected distance between two speaker means, in units of the
    /// within-speaker standard deviation.
    pub separation: f64,
    /// Mean turn length in seconds.
    pub mean_turn: f64,
    /// Shortest allowed turn.
    pub min_turn: f64,
    /// Probability of a pause after a turn.
    pub pause_probability: f64,
    /// Target share of speech time with two simultaneous speakers.
    pub overlap_fraction: f64,
    pub window_size: f64,
    pub window_shift: f64,
    pub dev_speakers: usize,
    pub dev_samples_per_speaker: usize,
    pub lda_dim: usize,
    pub scoring: ScoringKind,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            recordings: 10,
            nb_recordings: 0,
            min_speakers: 3,
            max_speakers: 5,
            duration: 300.0,
            dim: 256,
            speaker_rank: 16,
            separation: 10.0,
            mean_turn: 6.0,
            min_turn: 1.0,
            pause_probability: 0.3,
            overlap_fraction: 0.0,
            window_size: 1.5,
            window_shift: 0.25,
            dev_speakers: 60,
            dev_samples_per_speaker: 20,
            lda_dim: 220,
            scoring: ScoringKind::Plda,
        }
    }
}

/// `x = mean + basis * y + diag(within_std) * e` with `y, e` standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub mean: DVector<f64>,
    /// `D x R`, columns scaled by the between-speaker standard deviation.
    pub basis: DMatrix<f64>,
    pub within_std: DVector<f64>,
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

impl SpeakerModel {
    /// Random orthonormal speaker subspace of the given rank, scaled so that
    /// two speaker means lie `separation` apart on average (for unit
    /// within-speaker deviation); within-speaker standard deviations in
    /// `[0.75, 1.25]`.
    pub fn random(rng: &mut impl Rng, dim: usize, rank: usize, separation: f64) -> Result<Self> {
        if rank == 0 || rank > dim {
            return Err(Error::invalid(format!("speaker rank {rank} not in [1, {dim}]")));
        }
        let g = DMatrix::from_fn(dim, rank, |_, _| StandardNormal.sample(rng));
        let q = g.qr().q();
        let mean = normal_vec(rng, dim) * 2.0;
        let within_std = DVector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(0.75..1.25)));
        Ok(SpeakerModel {
            mean,
            basis: q * (separation / (2.0 * rank as f64).sqrt()),
            within_std,
        })
    }

    /// Same model with the between- and within-speaker covariances scaled.
    pub fn scaled(&self, between: f64, within: f64) -> Self {
        SpeakerModel {
            mean: self.mean.clone(),
            basis: &self.basis * between.sqrt(),
            within_std: &self.within_std * within.sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw_speaker(&self, rng: &mut impl Rng) -> DVector<f64> {
        &self.mean + &self.basis * normal_vec(rng, self.basis.ncols())
    }

    pub fn draw(&self, rng: &mut impl Rng, speaker: &DVector<f64>) -> DVector<f64> {
        speaker + normal_vec(rng, self.dim()).component_mul(&self.within_std)
    }

    /// The generating model as a PLDA model.
    pub fn plda(&self) -> Result<PldaModel> {
        PldaModel::new(
            self.mean.clone(),
            symmetrize(&(&self.basis * self.basis.transpose())),
            DMatrix::from_diagonal(&self.within_std.map(|s| s * s)),
        )
    }
}

/// Maximum-likelihood style two-covariance estimate from labeled rows:
/// pooled within-class covariance, and class-mean covariance corrected for
/// the within-class share, clipped to be positive semi-definite.
pub fn fit_two_covariance(x: &DMatrix<f64>, labels: &[usize]) -> Result<PldaModel> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(Error::invalid("one label per row is required"));
    }
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    let c = classes.len();
    if c < 2 || n <= c {
        return Err(Error::invalid("need at least two classes and more rows than classes"));
    }
    let mut within = DMatrix::<f64>::zeros(d, d);
    let mut means = DMatrix::<f64>::zeros(c, d);
    for (k, rows) in classes.values().enumerate() {
        let sub = x.select_rows(rows);
        let m = row_mean(&sub);
        let centred = center_rows(&sub, &m);
        within += centred.tr_mul(&centred);
        means.row_mut(k).copy_from(&m.transpose());
    }
    within /= (n - c) as f64;
    let mean = row_mean(&means);
    let centred = center_rows(&means, &mean);
    let mut between = centred.tr_mul(&centred) / (c - 1) as f64;
    between -= &within * (c as f64 / n as f64);
    let (values, vectors) = sorted_symmetric_eigen(&symmetrize(&between));
    let clipped = DMatrix::from_diagonal(&values.map(|v| v.max(0.0)));
    let between = symmetrize(&(&vectors * clipped * vectors.transpose()));
    PldaModel::new(mean, between, symmetrize(&within))
}

/// Speaker turns of one recording. Consecutive turns switch speaker; after
/// a turn there is a pause with `pause_probability`. Without a pause, the
/// previous speaker runs on into the next turn so that overlapped speech
/// makes up roughly `overlap_fraction` of the speech time.
pub fn generate_turns(rng: &mut impl Rng, recording_id: &str, speakers: &[String], cfg: &SynthConfig) -> Result<Annotation> {
    if speakers.is_empty() {
        return Err(Error::invalid("at least one speaker is required"));
    }
    let shape = 4.0;
    let turn = Gamma::new(shape, cfg.mean_turn / shape).map_err(|e| Error::invalid(e.to_string()))?;
    let pause = Exp::new(1.0 / 0.7).map_err(|e| Error::invalid(e.to_string()))?;
    let end_limit = cfg.duration - 0.2;
    let mut turns: Vec<(usize, f64, f64, bool)> = Vec::new();
    let mut t = 0.5;
    let mut current = rng.gen_range(0..speakers.len());
    while t + cfg.min_turn <= end_limit {
        let len = turn.sample(rng).max(cfg.min_turn);
        let end = (t + len).min(end_limit);
        let paused = rng.gen_bool(cfg.pause_probability);
        turns.push((current, t, end, paused));
        t = if paused { end + 0.3 + pause.sample(rng) } else { end };
        if speakers.len() > 1 {
            let step = rng.gen_range(1..speakers.len());
            current = (current + step) % speakers.len();
        }
    }
    let mut ann = Annotation::new(recording_id);
    let stretch = if cfg.pause_probability < 1.0 {
        cfg.overlap_fraction / (1.0 - cfg.pause_probability)
    } else {
        0.0
    };
    for i in 0..turns.len() {
        let (spk, on, mut off, paused) = turns[i];
        if !paused && speakers.len() > 1 {
            if let Some(&(_, next_on, next_off, _)) = turns.get(i + 1) {
                off += (stretch * (next_off - next_on)).min(0.8 * (next_off - next_on));
            }
        }
        ann.push(on, off, &speakers[spk])?;
    }
    Ok(ann)
}

/// Intervals where at least two speakers are active.
pub fn overlapped_intervals(ann: &Annotation) -> Vec<(f64, f64)> {
    let mut events: Vec<(f64, i32)> = Vec::new();
    for s in ann.segments() {
        events.push((s.onset, 1));
        events.push((s.offset(), -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::new();
    let mut active = 0;
    let mut start = 0.0;
    for (t, delta) in events {
        let before = active;
        active += delta;
        if before < 2 && active >= 2 {
            start = t;
        } else if before >= 2 && active < 2 && t > start {
            out.push((start, t));
        }
    }
    union_intervals(out)
}

/// One synthetic recording with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    pub recording_id: String,
    pub band: Band,
    pub reference: Annotation,
    /// Speech regions labeled `speech`.
    pub sad: Annotation,
    pub overlaps: OverlapRegions,
    /// Window embeddings (wideband recordings).
    pub embeddings: Option<EmbeddingSequence>,
    /// Frame posteriors (narrowband recordings).
    pub posteriors: Option<PosteriorMatrix>,
    /// 10 s / 5 s segment embeddings for bandwidth routing.
    pub band_embeddings: EmbeddingSequence,
}

impl SyntheticRecording {
    pub fn num_speakers(&self) -> usize {
        self.reference.speakers().len()
    }
}

/// Unit direction separating the two bandwidth classes in the segment-embedding space.
fn band_direction(dim: usize) -> DVector<f64> {
    let mut u = DVector::zeros(dim);
    u[0] = 1.0;
    u
}

/// Classifier whose hidden units read the projection on the band
/// direction: positive projections are narrowband, negative wideband.
pub fn band_classifier(dim: usize) -> MlpClassifier {
    let u = band_direction(dim);
    let mut w1 = DMatrix::zeros(dim, 2);
    w1.set_column(0, &u);
    w1.set_column(1, &(-&u));
    MlpClassifier::new(w1, DVector::zeros(2), DMatrix::identity(2, 2), DVector::zeros(2))
        .expect("shapes are consistent")
}

fn band_embeddings(rng: &mut impl Rng, id: &str, band: Band, cfg: &SynthConfig) -> Result<EmbeddingSequence> {
    let (size, shift) = (10.0f64.min(cfg.duration), 5.0);
    let n = window_times(cfg.duration, size, shift)?.len();
    let sign = if band == Band::Narrowband { 1.0 } else { -1.0 };
    let u = band_direction(cfg.dim);
    let mut m = DMatrix::<f32>::zeros(n, cfg.dim);
    for r in 0..n {
        let x = &u * (3.0 * sign) + normal_vec(rng, cfg.dim);
        m.row_mut(r).copy_from(&x.map(|v| v as f32).transpose());
    }
    EmbeddingSequence::new(id, m, size, shift, cfg.duration, None)
}

fn sad_of(reference: &Annotation) -> Result<Annotation> {
    let mut sad = Annotation::new(reference.recording_id());
    for (a, b) in reference.speech_regions() {
        sad.push(a, b, "speech")?;
    }
    Ok(sad)
}

fn active_at(reference: &Annotation, t: f64) -> Vec<&str> {
    let mut out: Vec<&str> = reference
        .segments()
        .iter()
        .filter(|s| s.onset <= t && t < s.offset())
        .map(|s| s.speaker.as_str())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// A wideband recording: each window takes the speaker active at its
/// centre; windows centred in overlapped speech average one draw of each
/// active speaker.
pub fn wideband_recording(
    rng: &mut impl Rng,
    model: &SpeakerModel,
    id: &str,
    num_speakers: usize,
    cfg: &SynthConfig,
) -> Result<SyntheticRecording> {
    let labels: Vec<String> = (0..num_speakers).map(|k| format!("S{}", k + 1)).collect();
    let means: BTreeMap<&str, DVector<f64>> = labels.iter().map(|l| (l.as_str(), model.draw_speaker(rng))).collect();
    let reference = generate_turns(rng, id, &labels, cfg)?;
    let regions = reference.speech_regions();
    let windows = speech_windows(&regions, cfg.window_size, cfg.window_shift)?;
    let mut m = DMatrix::<f32>::zeros(windows.len(), model.dim());
    for (r, &(a, b)) in windows.iter().enumerate() {
        let active = active_at(&reference, 0.5 * (a + b));
        let active: Vec<&str> = if active.is_empty() {
            // The centre can fall on a boundary gap between touching turns.
            active_at(&reference, a).into_iter().take(1).collect()
        } else {
            active
        };
        let mut x = DVector::zeros(model.dim());
        for spk in &active {
            x += model.draw(rng, &means[spk]);
        }
        x /= active.len().max(1) as f64;
        m.row_mut(r).copy_from(&x.map(|v| v as f32).transpose());
    }
    let embeddings = EmbeddingSequence::new(id, m, cfg.window_size, cfg.window_shift, cfg.duration, Some(regions))?;
    Ok(SyntheticRecording {
        recording_id: id.to_string(),
        band: Band::Wideband,
        sad: sad_of(&reference)?,
        overlaps: OverlapRegions::new(id, overlapped_intervals(&reference))?,
        embeddings: Some(embeddings),
        posteriors: None,
        band_embeddings: band_embeddings(rng, id, Band::Wideband, cfg)?,
        reference,
    })
}

/// A narrowband two-speaker recording with noisy frame posteriors at
/// 10 ms frames subsampled by 10: active speakers score in `[0.7, 1]`,
/// inactive ones in `[0, 0.3]`.
pub fn narrowband_recording(rng: &mut impl Rng, id: &str, cfg: &SynthConfig) -> Result<SyntheticRecording> {
    let labels = vec!["A".to_string(), "B".to_string()];
    let reference = generate_turns(rng, id, &labels, cfg)?;
    let (shift, factor) = (0.01, 10);
    let frames = (cfg.duration / (shift * factor as f64)).ceil() as usize;
    let mut values = DMatrix::zeros(frames, 2);
    for k in 0..frames {
        let centre = (k as f64 + 0.5) * shift * factor as f64;
        let active = active_at(&reference, centre);
        for (j, label) in labels.iter().enumerate() {
            let on = active.contains(&label.as_str());
            let u: f64 = rng.gen_range(0.0..0.3);
            values[(k, j)] = if on { 1.0 - u } else { u };
        }
    }
    let posteriors = PosteriorMatrix::new(id, values, shift, factor, None)?;
    Ok(SyntheticRecording {
        recording_id: id.to_string(),
        band: Band::Narrowband,
        sad: sad_of(&reference)?,
        overlaps: OverlapRegions::new(id, overlapped_intervals(&reference))?,
        embeddings: None,
        posteriors: Some(posteriors),
        band_embeddings: band_embeddings(rng, id, Band::Narrowband, cfg)?,
        reference,
    })
}

fn recording_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1))
}

/// Models fitted on labeled development pools.
#[derive(Debug, Clone)]
pub struct DevModels {
    /// Generating model, for PLDA scoring.
    pub plda: PldaModel,
    pub pca: crate::scoring::PcaModel,
    pub whitening: WhiteningStats,
    pub lda: LdaModel,
    /// Resegmentation-space PLDA from the matched pool.
    pub reseg_plda_a: PldaModel,
    /// Resegmentation-space PLDA from a pool with scaled covariances.
    pub reseg_plda_b: PldaModel,
}

fn dev_pool(rng: &mut impl Rng, model: &SpeakerModel, cfg: &SynthConfig) -> (DMatrix<f64>, Vec<usize>) {
    let n = cfg.dev_speakers * cfg.dev_samples_per_speaker;
    let mut x = DMatrix::zeros(n, model.dim());
    let mut labels = Vec::with_capacity(n);
    for s in 0..cfg.dev_speakers {
        let mean = model.draw_speaker(rng);
        for k in 0..cfg.dev_samples_per_speaker {
            let r = s * cfg.dev_samples_per_speaker + k;
            x.row_mut(r).copy_from(&model.draw(rng, &mean).transpose());
            labels.push(s);
        }
    }
    (x, labels)
}

/// Fits the PCA, whitening, LDA and resegmentation PLDA models on two
/// development pools: one from `model`, one from `model` with the between
/// covariance scaled by 0.8 and the within covariance by 1.2.
pub fn dev_models(rng: &mut impl Rng, model: &SpeakerModel, cfg: &SynthConfig, ridge: f64) -> Result<DevModels> {
    let (x_a, labels_a) = dev_pool(rng, model, cfg);
    let (x_b, labels_b) = dev_pool(rng, &model.scaled(0.8, 1.2), cfg);
    let pca = fit_pca(&x_a, PcaTarget::Dims(30.min(cfg.dim)))?;
    let whitening = WhiteningStats::fit(&x_a)?;
    let w_a = whiten_and_normalize(&x_a, &whitening, ridge)?;
    let (lda, p_a) = lda_project(&w_a, &labels_a, cfg.lda_dim.min(cfg.dim), ridge.max(1e-9))?;
    let p_b = lda.apply(&whiten_and_normalize(&x_b, &whitening, ridge)?)?;
    Ok(DevModels {
        plda: model.plda()?,
        pca,
        whitening,
        lda,
        reseg_plda_a: fit_two_covariance(&p_a, &labels_a)?,
        reseg_plda_b: fit_two_covariance(&p_b, &labels_b)?,
    })
}

/// Everything generated for one corpus.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub model: SpeakerModel,
    pub recordings: Vec<SyntheticRecording>,
    pub models: DevModels,
}

/// Generates a corpus; identical seeds give identical corpora.
pub fn generate_corpus(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    if cfg.min_speakers == 0 || cfg.min_speakers > cfg.max_speakers {
        return Err(Error::invalid("speaker count range is empty"));
    }
    if !(0.0..1.0).contains(&cfg.overlap_fraction) || !(0.0..1.0).contains(&cfg.pause_probability) {
        return Err(Error::invalid("overlap_fraction and pause_probability must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SpeakerModel::random(&mut rng, cfg.dim, cfg.speaker_rank, cfg.separation)?;
    let models = dev_models(&mut rng, &model, cfg, 1e-6)?;
    let mut recordings = Vec::new();
    for i in 0..cfg.recordings {
        let mut r = recording_rng(seed, i as u64);
        let n = r.gen_range(cfg.min_speakers..=cfg.max_speakers);
        recordings.push(wideband_recording(&mut r, &model, &format!("synth_{i:03}"), n, cfg)?);
    }
    for i in 0..cfg.nb_recordings {
        let mut r = recording_rng(seed, (cfg.recordings + i) as u64);
        recordings.push(narrowband_recording(&mut r, &format!("synth_nb_{i:03}"), cfg)?);
    }
    Ok(SyntheticCorpus {
        model,
        recordings,
        models,
    })
}

/// Domain of each recording: wideband recordings alternate between two
/// domains, narrowband ones form a third.
pub fn domain_of(rec: &SyntheticRecording, index: usize) -> &'static str {
    match (rec.band, index % 2) {
        (Band::Narrowband, _) => "telephone",
        (Band::Wideband, 0) => "meeting",
        (Band::Wideband, _) => "broadcast",
    }
}

/// Writes the corpus under `dir` together with a ready-to-run
/// `config.toml` using relative paths. Returns the configuration.
pub fn write_corpus(corpus: &SyntheticCorpus, cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<PipelineConfig> {
    let sub = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::create_dir_all(&p)?;
        Ok(p)
    };
    let (emb, band, post, models) = (sub("emb")?, sub("band")?, sub("post")?, sub("models")?);
    let mut refs = Vec::new();
    let mut sads = Vec::new();
    let mut uems = Vec::new();
    let mut ovls = Vec::new();
    let mut domains = String::new();
    let mut core = String::new();
    for (i, r) in corpus.recordings.iter().enumerate() {
        if let Some(e) = &r.embeddings {
            write_embeddings(e, &emb.join(format!("{}.emb", r.recording_id)))?;
        }
        if let Some(p) = &r.posteriors {
            p.save(&post.join(format!("{}.post", r.recording_id)))?;
        }
        write_embeddings(&r.band_embeddings, &band.join(format!("{}.emb", r.recording_id)))?;
        refs.push(r.reference.clone());
        sads.push(r.sad.clone());
        uems.push(ScoringRegions::new(r.recording_id.clone(), vec![(0.0, cfg.duration)])?);
        ovls.push(r.overlaps.clone());
        domains.push_str(&format!("{} {}\n", r.recording_id, domain_of(r, i)));
        if i != 1 {
            core.push_str(&format!("{}\n", r.recording_id));
        }
    }
    fs::write(dir.join("ref.rttm"), write_rttm(&refs))?;
    fs::write(dir.join("sad.rttm"), write_rttm(&sads))?;
    fs::write(dir.join("all.uem"), write_uem(&uems))?;
    fs::write(dir.join("overlap.ovl"), write_overlaps(&ovls))?;
    fs::write(dir.join("domains.txt"), domains)?;
    fs::write(dir.join("core.txt"), core)?;

    let m = &corpus.models;
    m.plda.save(&models.join("plda.plda"))?;
    m.pca.save(&models.join("pca.pca"))?;
    m.whitening.save(&models.join("whitening.wht"))?;
    m.lda.save(&models.join("lda.lda"))?;
    m.reseg_plda_a.save(&models.join("reseg_a.plda"))?;
    m.reseg_plda_b.save(&models.join("reseg_b.plda"))?;
    band_classifier(cfg.dim).save(&models.join("bandwidth.mlp"))?;

    let mut pc = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    pc.embedding.window_size = cfg.window_size;
    pc.embedding.window_shift = cfg.window_shift;
    pc.scoring.kind = cfg.scoring;
    pc.vbx.lda_dim = m.lda.output_dim();
    let p = &mut pc.paths;
    p.sad = "sad.rttm".into();
    p.embeddings_dir = Some("emb".into());
    p.band_embeddings_dir = Some("band".into());
    p.posteriors_dir = Some("post".into());
    p.reference = Some("ref.rttm".into());
    p.uem = Some("all.uem".into());
    if cfg.overlap_fraction > 0.0 {
        p.overlaps = Some("overlap.ovl".into());
    }
    p.bandwidth_model = Some("models/bandwidth.mlp".into());
    p.pca = Some("models/pca.pca".into());
    p.plda = Some("models/plda.plda".into());
    p.whitening = Some("models/whitening.wht".into());
    p.lda = Some("models/lda.lda".into());
    p.reseg_plda = vec!["models/reseg_a.plda".into(), "models/reseg_b.plda".into()];
    fs::write(dir.join("config.toml"), pc.to_toml())?;
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            recordings: 1,
            nb_recordings: 1,
            duration: 60.0,
            dim: 16,
            speaker_rank: 4,
            dev_speakers: 10,
            dev_samples_per_speaker: 5,
            lda_dim: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn turns_stay_inside_the_recording() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<String> = (0..3).map(|k| k.to_string()).collect();
        let ann = generate_turns(&mut rng, "r", &labels, &small()).unwrap();
        assert!(ann.end() <= 60.0);
        assert!(ann.segments().iter().all(|s| s.duration >= 1.0 - 1e-12));
        assert!(overlapped_intervals(&ann).is_empty());
    }

    #[test]
    fn overlap_fraction_is_roughly_met() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SynthConfig {
            overlap_fraction: 0.2,
            duration: 600.0,
            ..small()
        };
        let labels: Vec<String> = (0..3).map(|k| k.to_string()).collect();
        let ann = generate_turns(&mut rng, "r", &labels, &cfg).unwrap();
        let ovl: f64 = overlapped_intervals(&ann).iter().map(|(a, b)| b - a).sum();
        let speech: f64 = ann.speech_regions().iter().map(|(a, b)| b - a).sum();
        let share = ovl / speech;
        assert!(share > 0.1 && share < 0.3, "overlap share {share}");
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_corpus(&small(), 7).unwrap();
        let b = generate_corpus(&small(), 7).unwrap();
        assert_eq!(a.recordings[0].reference, b.recordings[0].reference);
        assert_eq!(a.recordings[0].embeddings, b.recordings[0].embeddings);
        assert_eq!(a.recordings[1].posteriors, b.recordings[1].posteriors);
    }

    #[test]
    fn two_covariance_fit_recovers_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = SpeakerModel::random(&mut rng, 3, 3, 2.0).unwrap();
        let cfg = SynthConfig {
            dev_speakers: 400,
            dev_samples_per_speaker: 10,
            ..small()
        };
        let (x, labels) = dev_pool(&mut rng, &model, &cfg);
        let fit = fit_two_covariance(&x, &labels).unwrap();
        let truth = model.plda().unwrap();
        assert!((fit.within.trace() - truth.within.trace()).abs() / truth.within.trace() < 0.1);
        assert!((fit.between.trace() - truth.between.trace()).abs() / truth.between.trace() < 0.2);
    }

    #[test]
    fn written_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let corpus = generate_corpus(&cfg, 5).unwrap();
        write_corpus(&corpus, &cfg, 5, dir.path()).unwrap();
        let loaded = PipelineConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(loaded.seed, 5);
    }
}
