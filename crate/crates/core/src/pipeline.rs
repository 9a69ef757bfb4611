//! Corpus orchestration: bandwidth routing, the wideband clustering branch,
//! the narrowband posterior-decoding branch, scoring and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::{crop, merge_adjacent, parse_rttm, parse_uem, write_rttm, Annotation, ScoringRegions};
use crate::bandwidth::{classify_recording, Band, MlpClassifier};
use crate::clustering::{build_knn_graph, estimate_num_speakers, pic_cluster, Partition, PicParams};
use crate::embeddings::{read_embeddings, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::metrics::{self, DerReport, ScoringOptions};
use crate::reseg::{
    assign_overlap, decode_posteriors, interpolate_plda, parse_overlaps, rasterize_window_posteriors,
    speaker_label, vbx_resegment, whiten_and_normalize, LdaModel, OverlapRegions, PosteriorMatrix,
    VbxConfig, WhiteningStats,
};
use crate::scoring::{cosine_similarity, fit_pca, score_plda_matrix, PcaModel, PcaTarget, PldaModel, SimilarityMatrix};

/// Input locations. Relative paths are resolved against the directory of
/// the configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// RTTM with speech regions; its recording ids define the corpus.
    pub sad: PathBuf,
    /// Directory of `<recording>.emb` window embeddings.
    pub embeddings_dir: Option<PathBuf>,
    /// Directory of `<recording>.emb` segment embeddings for routing.
    pub band_embeddings_dir: Option<PathBuf>,
    /// Directory of `<recording>.post` frame posteriors for narrowband recordings.
    pub posteriors_dir: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub uem: Option<PathBuf>,
    pub overlaps: Option<PathBuf>,
    pub bandwidth_model: Option<PathBuf>,
    /// PCA model for cosine scoring; fitted per recording when absent.
    pub pca: Option<PathBuf>,
    /// PLDA model in the embedding space, for PLDA scoring.
    pub plda: Option<PathBuf>,
    pub whitening: Option<PathBuf>,
    pub lda: Option<PathBuf>,
    /// One or two PLDA models in the resegmentation space; two are interpolated.
    pub reseg_plda: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringKind {
    Cosine,
    Plda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub window_size: f64,
    pub window_shift: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            window_size: 1.5,
            window_shift: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub kind: ScoringKind,
    /// PCA dimensions for cosine scoring.
    pub pca_dims: usize,
    /// Fraction of recording energy kept before PLDA scoring.
    pub plda_energy_fraction: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            kind: ScoringKind::Plda,
            pca_dims: 30,
            plda_energy_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub z: f64,
    pub k: usize,
    pub sigmoid_scale: f64,
    pub sigmoid_offset: f64,
    /// Speaker-count threshold on average-linkage scores; 0.2 for cosine and
    /// -5.0 for PLDA when absent.
    pub ahc_threshold: Option<f64>,
    /// Use average-linkage clustering instead of path integral clustering.
    pub use_ahc: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            z: 0.01,
            k: 30,
            sigmoid_scale: 10.0,
            sigmoid_offset: 0.5,
            ahc_threshold: None,
            use_ahc: false,
        }
    }
}

impl ClusteringConfig {
    pub fn threshold_for(&self, kind: ScoringKind) -> f64 {
        self.ahc_threshold.unwrap_or(match kind {
            ScoringKind::Cosine => 0.2,
            ScoringKind::Plda => -5.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResegConfig {
    pub enabled: bool,
    pub whitening_ridge: f64,
    /// Same-speaker segments closer than this are fused in the output.
    pub merge_gap: f64,
    /// Frame shift of the posteriors used for overlap assignment.
    pub frame_shift: f64,
}

impl Default for ResegConfig {
    fn default() -> Self {
        ResegConfig {
            enabled: true,
            whitening_ridge: 1e-6,
            merge_gap: 0.0,
            frame_shift: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub threshold: f64,
    pub median_window: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            threshold: 0.5,
            median_window: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub collar: f64,
    pub score_overlap: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            collar: 0.0,
            score_overlap: true,
        }
    }
}

/// Complete pipeline configuration, one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub embedding: EmbeddingConfig,
    pub scoring: ScoringConfig,
    pub clustering: ClusteringConfig,
    pub reseg: ResegConfig,
    pub vbx: VbxConfig,
    pub decode: DecodeConfig,
    pub metrics: MetricsConfig,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Reads, resolves relative paths and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.sad);
        for opt in [
            &mut p.embeddings_dir,
            &mut p.band_embeddings_dir,
            &mut p.posteriors_dir,
            &mut p.reference,
            &mut p.uem,
            &mut p.overlaps,
            &mut p.bandwidth_model,
            &mut p.pca,
            &mut p.plda,
            &mut p.whitening,
            &mut p.lda,
        ] {
            if let Some(v) = opt.as_mut() {
                fix(v);
            }
        }
        p.reseg_plda.iter_mut().for_each(fix);
    }

    /// Checks numeric ranges, cross-field requirements and that every
    /// referenced path exists.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let mut paths: Vec<&PathBuf> = vec![&p.sad];
        paths.extend(
            [
                &p.embeddings_dir,
                &p.band_embeddings_dir,
                &p.posteriors_dir,
                &p.reference,
                &p.uem,
                &p.overlaps,
                &p.bandwidth_model,
                &p.pca,
                &p.plda,
                &p.whitening,
                &p.lda,
            ]
            .into_iter()
            .flatten(),
        );
        paths.extend(p.reseg_plda.iter());
        for path in paths {
            if !path.exists() {
                return Err(config_err(format!("path {} does not exist", path.display())));
            }
        }
        if self.scoring.kind == ScoringKind::Plda && p.plda.is_none() {
            return Err(config_err("PLDA scoring needs paths.plda"));
        }
        if self.reseg.enabled && (p.whitening.is_none() || p.reseg_plda.is_empty()) {
            return Err(config_err(
                "resegmentation needs paths.whitening and at least one paths.reseg_plda",
            ));
        }
        if p.reseg_plda.len() > 2 {
            return Err(config_err("at most two resegmentation PLDA models can be interpolated"));
        }
        if p.band_embeddings_dir.is_some() != p.bandwidth_model.is_some() {
            return Err(config_err("routing needs both paths.bandwidth_model and paths.band_embeddings_dir"));
        }
        let e = &self.embedding;
        if !(e.window_size > 0.0 && e.window_shift > 0.0) {
            return Err(config_err("window size and shift must be > 0"));
        }
        if self.scoring.pca_dims == 0 || !(self.scoring.plda_energy_fraction > 0.0 && self.scoring.plda_energy_fraction <= 1.0) {
            return Err(config_err("pca_dims must be >= 1 and plda_energy_fraction in (0, 1]"));
        }
        PicParams::new(self.clustering.z, self.clustering.k.max(1), 1).map_err(|e| config_err(e.to_string()))?;
        if !(self.clustering.sigmoid_scale > 0.0) {
            return Err(config_err("sigmoid_scale must be > 0"));
        }
        self.vbx.validate()?;
        if !(self.reseg.whitening_ridge >= 0.0 && self.reseg.merge_gap >= 0.0 && self.reseg.frame_shift > 0.0) {
            return Err(config_err("whitening_ridge and merge_gap must be >= 0, frame_shift > 0"));
        }
        if !(self.decode.threshold > 0.0 && self.decode.threshold < 1.0) || self.decode.median_window % 2 == 0 {
            return Err(config_err("decode threshold must lie in (0, 1) and median_window be odd"));
        }
        if !(self.metrics.collar >= 0.0) {
            return Err(config_err("collar must be >= 0"));
        }
        Ok(())
    }
}

/// Models and annotations shared read-only by every recording.
pub struct Context {
    pub sad: BTreeMap<String, Annotation>,
    pub reference: Option<BTreeMap<String, Annotation>>,
    pub uem: BTreeMap<String, ScoringRegions>,
    pub overlaps: BTreeMap<String, OverlapRegions>,
    pub bandwidth: Option<MlpClassifier>,
    pub pca: Option<PcaModel>,
    pub plda: Option<PldaModel>,
    pub whitening: Option<WhiteningStats>,
    pub lda: Option<LdaModel>,
    pub reseg_plda: Option<PldaModel>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn by_recording(list: Vec<Annotation>) -> BTreeMap<String, Annotation> {
    list.into_iter().map(|a| (a.recording_id().to_string(), a)).collect()
}

fn fatal<T>(what: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| config_err(format!("{}: {e}", what.display())))
}

impl Context {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let p = &cfg.paths;
        let sad = by_recording(fatal(&p.sad, parse_rttm(&read_text(&p.sad)?))?);
        let reference = match &p.reference {
            Some(path) => Some(by_recording(fatal(path, parse_rttm(&read_text(path)?))?)),
            None => None,
        };
        let uem = match &p.uem {
            Some(path) => fatal(path, parse_uem(&read_text(path)?))?
                .into_iter()
                .map(|r| (r.recording_id().to_string(), r))
                .collect(),
            None => BTreeMap::new(),
        };
        let overlaps = match &p.overlaps {
            Some(path) => fatal(path, parse_overlaps(&read_text(path)?))?
                .into_iter()
                .map(|r| (r.recording_id().to_string(), r))
                .collect(),
            None => BTreeMap::new(),
        };
        let bandwidth = match &p.bandwidth_model {
            Some(path) => Some(fatal(path, MlpClassifier::load(path))?),
            None => None,
        };
        let pca = match &p.pca {
            Some(path) => Some(fatal(path, PcaModel::load(path))?),
            None => None,
        };
        let plda = match &p.plda {
            Some(path) => Some(fatal(path, PldaModel::load(path))?),
            None => None,
        };
        let whitening = match &p.whitening {
            Some(path) => Some(fatal(path, WhiteningStats::load(path))?),
            None => None,
        };
        let lda = match &p.lda {
            Some(path) => Some(fatal(path, LdaModel::load(path))?),
            None => None,
        };
        let reseg_models = p
            .reseg_plda
            .iter()
            .map(|path| fatal(path, PldaModel::load(path)))
            .collect::<Result<Vec<_>>>()?;
        let reseg_plda = match reseg_models.as_slice() {
            [] => None,
            [m] => Some(m.clone()),
            [a, b] => Some(interpolate_plda(a, b, cfg.vbx.plda_interpolation_alpha)?),
            _ => unreachable!("validated to at most two models"),
        };
        if let (Some(w), Some(l)) = (&whitening, &lda) {
            if w.dim() != l.mean.len() {
                return Err(config_err("whitening and LDA dimensions differ"));
            }
        }
        if let Some(m) = &reseg_plda {
            let expect = lda.as_ref().map(LdaModel::output_dim).or(whitening.as_ref().map(WhiteningStats::dim));
            if expect.is_some_and(|d| d != m.dim()) {
                return Err(config_err("resegmentation PLDA does not match the LDA/whitening output dimension"));
            }
        }
        Ok(Context {
            sad,
            reference,
            uem,
            overlaps,
            bandwidth,
            pca,
            plda,
            whitening,
            lda,
            reseg_plda,
        })
    }

    /// Recording ids of the corpus, in sorted order.
    pub fn recordings(&self) -> Vec<String> {
        self.sad.keys().cloned().collect()
    }

    fn sad_for(&self, rec: &str) -> Annotation {
        self.sad.get(rec).cloned().unwrap_or_else(|| Annotation::new(rec))
    }
}

/// Wall-clock seconds per named stage.
pub type Timings = Vec<(String, f64)>;

fn timed<T>(timings: &mut Timings, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timings.push((stage.to_string(), start.elapsed().as_secs_f64()));
    out
}

/// Annotation assigning each window span to its cluster's speaker label.
pub fn labels_to_annotation(recording_id: &str, spans: &[(f64, f64)], labels: &[usize]) -> Result<Annotation> {
    let mut ann = Annotation::new(recording_id);
    for (&(on, off), &l) in spans.iter().zip(labels) {
        ann.push(on, off, &speaker_label(l))?;
    }
    Ok(merge_adjacent(&ann, 0.0))
}

/// Similarity scores of one recording, as used for the graph and for AHC.
pub fn score_recording(cfg: &PipelineConfig, ctx: &Context, seq: &EmbeddingSequence) -> Result<SimilarityMatrix> {
    score_with(cfg.scoring.kind, cfg, ctx, seq)
}

fn score_with(kind: ScoringKind, cfg: &PipelineConfig, ctx: &Context, seq: &EmbeddingSequence) -> Result<SimilarityMatrix> {
    match kind {
        ScoringKind::Cosine => {
            let x = seq.to_f64();
            let fitted;
            let pca = match &ctx.pca {
                Some(p) => p,
                None => {
                    fitted = fit_pca(&x, PcaTarget::Dims(cfg.scoring.pca_dims))?;
                    &fitted
                }
            };
            cosine_similarity(&seq.recording_id, &x, pca)
        }
        ScoringKind::Plda => {
            let model = ctx.plda.as_ref().ok_or_else(|| config_err("no PLDA model loaded"))?;
            score_plda_matrix(seq, model, cfg.scoring.plda_energy_fraction)
        }
    }
}

/// Wideband branch: scoring, speaker-count estimation, clustering,
/// resegmentation, overlap assignment and cleanup.
pub fn run_wideband(cfg: &PipelineConfig, ctx: &Context, rec: &str, timings: &mut Timings) -> Result<Annotation> {
    let dir = cfg
        .paths
        .embeddings_dir
        .as_ref()
        .ok_or_else(|| config_err("wideband recordings need paths.embeddings_dir"))?;
    let path = dir.join(format!("{rec}.emb"));
    if !path.exists() {
        return Err(Error::Missing(format!("embedding file {}", path.display())));
    }
    let seq = timed(timings, "load", || read_embeddings(&path))?;
    if seq.recording_id != rec {
        return Err(Error::invalid(format!("{} holds recording '{}'", path.display(), seq.recording_id)));
    }
    let sad = ctx.sad_for(rec);
    let spans = seq.window_spans();
    let n = seq.len();

    let (partition, responsibilities) = if n == 1 {
        (Partition::singletons(1), DMatrix::from_element(1, 1, 1.0))
    } else {
        let raw = timed(timings, "score", || score_recording(cfg, ctx, &seq))?;
        // The speaker count comes from PLDA scores whenever a PLDA model is
        // loaded, whatever scoring builds the graph.
        let count_kind = match (cfg.scoring.kind, &ctx.plda) {
            (ScoringKind::Cosine, Some(_)) => ScoringKind::Plda,
            (kind, _) => kind,
        };
        let count_scores = if count_kind == cfg.scoring.kind {
            raw.clone()
        } else {
            timed(timings, "score", || score_with(count_kind, cfg, ctx, &seq))?
        };
        let clusters = estimate_num_speakers(&count_scores, cfg.clustering.threshold_for(count_kind));
        let initial = timed(timings, "cluster", || {
            if cfg.clustering.use_ahc {
                return Ok(crate::clustering::ahc_cluster(&raw, crate::clustering::AhcStop::Clusters(clusters)));
            }
            let graph_scores = match raw.kind {
                crate::scoring::ScoreKind::Plda => raw.standardized(),
                crate::scoring::ScoreKind::Cosine => raw.clone(),
            };
            let k = cfg.clustering.k.min(n - 1);
            let graph = build_knn_graph(&graph_scores, k, cfg.clustering.sigmoid_scale, cfg.clustering.sigmoid_offset)?;
            let params = PicParams::new(cfg.clustering.z, k, clusters)?;
            Ok(pic_cluster(&graph, &params)?.partition)
        })?;
        if cfg.reseg.enabled {
            timed(timings, "resegment", || {
                let stats = ctx.whitening.as_ref().ok_or_else(|| config_err("no whitening statistics"))?;
                let model = ctx.reseg_plda.as_ref().ok_or_else(|| config_err("no resegmentation PLDA"))?;
                let mut x = whiten_and_normalize(&seq.to_f64(), stats, cfg.reseg.whitening_ridge)?;
                if let Some(lda) = &ctx.lda {
                    x = lda.apply(&x)?;
                }
                let out = vbx_resegment(&x, model, &initial, &cfg.vbx)?;
                Ok((out.partition, out.responsibilities))
            })?
        } else {
            let s = initial.num_clusters();
            let labels = initial.labels().to_vec();
            (initial, DMatrix::from_fn(n, s, |t, c| f64::from(u8::from(labels[t] == c))))
        }
    };

    let mut ann = labels_to_annotation(rec, &spans, partition.labels())?;
    if let Some(ovl) = ctx.overlaps.get(rec) {
        ann = timed(timings, "overlap", || {
            let names = (0..partition.num_clusters()).map(speaker_label).collect();
            let post = rasterize_window_posteriors(
                rec,
                &spans,
                &responsibilities,
                seq.recording_duration,
                cfg.reseg.frame_shift,
                Some(names),
            )?;
            Ok(assign_overlap(&ann, &post, ovl))
        })?;
    }
    let ann = merge_adjacent(&ann, cfg.reseg.merge_gap);
    Ok(crop(&ann, &sad.speech_regions()))
}

/// Narrowband branch: decodes externally produced frame posteriors.
pub fn run_narrowband(cfg: &PipelineConfig, ctx: &Context, rec: &str, timings: &mut Timings) -> Result<Annotation> {
    let dir = cfg
        .paths
        .posteriors_dir
        .as_ref()
        .ok_or_else(|| config_err("narrowband recordings need paths.posteriors_dir"))?;
    let path = dir.join(format!("{rec}.post"));
    if !path.exists() {
        return Err(Error::Missing(format!("posterior file {}", path.display())));
    }
    let post = timed(timings, "load", || PosteriorMatrix::load(&path))?;
    let sad = ctx.sad_for(rec);
    let ann = timed(timings, "decode", || {
        decode_posteriors(&post, cfg.decode.threshold, &sad, cfg.decode.median_window)
    })?;
    Ok(merge_adjacent(&ann, cfg.reseg.merge_gap))
}

/// Bandwidth of a recording; wideband when no classifier is configured.
pub fn route(cfg: &PipelineConfig, ctx: &Context, rec: &str) -> Result<Band> {
    let (Some(model), Some(dir)) = (&ctx.bandwidth, &cfg.paths.band_embeddings_dir) else {
        return Ok(Band::Wideband);
    };
    let path = dir.join(format!("{rec}.emb"));
    if !path.exists() {
        return Err(Error::Missing(format!("band embedding file {}", path.display())));
    }
    let seq = read_embeddings(&path)?;
    Ok(classify_recording(model, rec, &seq.to_f64())?.file_label)
}

/// Outcome of one recording.
#[derive(Debug, Clone)]
pub struct RecordingOutcome {
    pub recording_id: String,
    pub route: Option<Band>,
    pub result: std::result::Result<Annotation, String>,
    pub timings: Timings,
}

/// Routes and diarizes one recording; errors are captured, not propagated.
pub fn process_recording(cfg: &PipelineConfig, ctx: &Context, rec: &str) -> RecordingOutcome {
    let mut timings = Timings::new();
    let route = timed(&mut timings, "route", || route(cfg, ctx, rec));
    let (route, result) = match route {
        Err(e) => (None, Err(e)),
        Ok(band) => {
            let r = match band {
                Band::Wideband => run_wideband(cfg, ctx, rec, &mut timings),
                Band::Narrowband => run_narrowband(cfg, ctx, rec, &mut timings),
            };
            (Some(band), r)
        }
    };
    if let Err(e) = &result {
        log::error!("{rec}: {e}");
    }
    RecordingOutcome {
        recording_id: rec.to_string(),
        route,
        result: result.map_err(|e| e.to_string()),
        timings,
    }
}

/// Corpus-level options that are not part of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses the default pool size.
    pub workers: usize,
    /// Recordings entering the `ALL` row (the core subset); all when absent.
    pub subset: Option<BTreeSet<String>>,
    /// Recording to domain map for the per-domain table.
    pub domains: Option<BTreeMap<String, String>>,
}

/// Scores of a corpus run.
#[derive(Debug, Clone)]
pub struct CorpusScores {
    pub reports: Vec<DerReport>,
    pub all: DerReport,
    pub domains: Vec<metrics::DomainSummary>,
}

#[derive(Debug, Clone)]
pub struct CorpusRun {
    pub outcomes: Vec<RecordingOutcome>,
    pub scores: Option<CorpusScores>,
    pub config_hash: String,
    pub seed: u64,
}

impl CorpusRun {
    pub fn succeeded(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_ok()).count()
    }

    pub fn hypotheses(&self) -> Vec<&Annotation> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect()
    }
}

/// Scores hypotheses against references; recordings without a reference
/// are skipped.
pub fn score_corpus(
    hypotheses: &[&Annotation],
    references: &BTreeMap<String, Annotation>,
    uem: &BTreeMap<String, ScoringRegions>,
    options: &ScoringOptions,
    run: &RunOptions,
) -> Result<Option<CorpusScores>> {
    let mut reports = Vec::new();
    for hyp in hypotheses {
        let rec = hyp.recording_id();
        let Some(reference) = references.get(rec) else {
            log::warn!("{rec}: no reference, not scored");
            continue;
        };
        reports.push(metrics::der(reference, hyp, uem.get(rec), options)?);
    }
    if reports.is_empty() {
        return Ok(None);
    }
    let all = metrics::aggregate(&reports, run.subset.as_ref())?;
    let domains = run
        .domains
        .as_ref()
        .map(|d| metrics::domain_breakdown(&reports, d))
        .unwrap_or_default();
    Ok(Some(CorpusScores { reports, all, domains }))
}

/// Runs every recording of the corpus on a worker pool and scores the
/// results when references are configured.
pub fn run_corpus(cfg: &PipelineConfig, run: &RunOptions) -> Result<CorpusRun> {
    let ctx = Context::load(cfg)?;
    let recordings = ctx.recordings();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.workers)
        .build()
        .map_err(|e| config_err(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<RecordingOutcome> =
        pool.install(|| recordings.par_iter().map(|rec| process_recording(cfg, &ctx, rec)).collect());
    let scores = match &ctx.reference {
        Some(refs) => {
            let hyps: Vec<&Annotation> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let options = ScoringOptions {
                collar: cfg.metrics.collar,
                score_overlap: cfg.metrics.score_overlap,
            };
            score_corpus(&hyps, refs, &ctx.uem, &options, run)?
        }
        None => None,
    };
    Ok(CorpusRun {
        outcomes,
        scores,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    })
}

/// Manifest text: versions, configuration hash, then one line per recording.
pub fn format_manifest(run: &CorpusRun) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "picdiar {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "config_sha256 {}", run.config_hash);
    let _ = writeln!(out, "seed {}", run.seed);
    let _ = writeln!(out, "recording\troute\tstatus\ttimings");
    for o in &run.outcomes {
        let route = o.route.map_or_else(|| "-".to_string(), |b| b.to_string());
        let status = match &o.result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {}", e.replace(['\t', '\n'], " ")),
        };
        let timings: Vec<String> = o.timings.iter().map(|(s, t)| format!("{s}={t:.3}s")).collect();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", o.recording_id, route, status, timings.join(","));
    }
    out
}

/// Report text: the score table, then the per-domain table when present.
pub fn format_report(scores: &CorpusScores) -> String {
    let mut out = metrics::format_table(&scores.reports, &scores.all);
    if !scores.domains.is_empty() {
        out.push('\n');
        out.push_str(&metrics::format_domain_table(&scores.domains));
    }
    out
}

/// Writes `hyp/<rec>.rttm`, `manifest.txt` and, when scored, `report.txt`
/// and `report.tsv` under `dir`.
pub fn write_outputs(run: &CorpusRun, dir: &Path) -> Result<()> {
    let hyp_dir = dir.join("hyp");
    fs::create_dir_all(&hyp_dir)?;
    for o in &run.outcomes {
        if let Ok(ann) = &o.result {
            fs::write(hyp_dir.join(format!("{}.rttm", o.recording_id)), write_rttm([ann]))?;
        }
    }
    fs::write(dir.join("manifest.txt"), format_manifest(run))?;
    if let Some(scores) = &run.scores {
        write_reports(scores, dir)?;
    }
    Ok(())
}

pub fn write_reports(scores: &CorpusScores, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), format_report(scores))?;
    fs::write(dir.join("report.tsv"), metrics::format_tsv(&scores.reports, &scores.all))?;
    Ok(())
}

/// Reads a list of recording ids, one per line; blank lines and `#` comments skipped.
pub fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().next().unwrap_or(l).to_string())
        .collect())
}

/// Reads `<recording> <domain>` lines.
pub fn read_domain_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        match (fields.next(), fields.next(), fields.next()) {
            (Some(rec), Some(domain), None) => {
                out.insert(rec.to_string(), domain.to_string());
            }
            _ => return Err(Error::parse(i + 1, "expected '<recording> <domain>'")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_reference_constants() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.embedding.window_size, 1.5);
        assert_eq!(cfg.embedding.window_shift, 0.25);
        assert_eq!(cfg.scoring.pca_dims, 30);
        assert_eq!(cfg.scoring.plda_energy_fraction, 0.3);
        assert_eq!(cfg.vbx.loop_probability, 0.8);
        assert_eq!(cfg.vbx.lda_dim, 220);
        assert_eq!(cfg.vbx.plda_interpolation_alpha, 0.5);
        assert_eq!(cfg.decode.threshold, 0.5);
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut cfg = PipelineConfig::default();
        cfg.paths.sad = "sad.rttm".into();
        cfg.paths.reseg_plda = vec!["a.plda".into(), "b.plda".into()];
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[paths]\nsad = \"nope.rttm\"\n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn windows_map_to_merged_segments() {
        let ann = labels_to_annotation("r", &[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)], &[0, 0, 1]).unwrap();
        let segs: Vec<(f64, f64, &str)> =
            ann.segments().iter().map(|s| (s.onset, s.offset(), s.speaker.as_str())).collect();
        assert_eq!(segs, vec![(0.0, 2.0, "spk01"), (2.0, 3.0, "spk02")]);
    }
}
