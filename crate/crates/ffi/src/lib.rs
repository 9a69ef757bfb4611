//! C interface to the picdiar diarization library.
//!
//! Every function returns a [`PdStatus`]; results are written through out
//! pointers. On failure, [`pd_last_error`] describes the most recent error
//! on the calling thread. Objects created by the library are opaque
//! handles released with their matching `*_free` function, and strings it
//! returns are released with [`pd_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use picdiar::annotation::{parse_rttm, write_rttm, Annotation};
use picdiar::clustering::{ahc_cluster, build_knn_graph, pic_cluster, AffinityGraph, AhcStop, Partition, PicParams};
use picdiar::metrics::{aggregate, der, ScoringOptions};
use picdiar::pipeline::{run_corpus, write_outputs, PipelineConfig, RunOptions};
use picdiar::scoring::{PldaModel, ScoreKind, SimilarityMatrix};
use picdiar::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Format = 4,
    Numerical = 5,
    Config = 6,
    Missing = 7,
    Io = 8,
    Panic = 9,
}

/// Parsed RTTM content: one annotation per recording.
pub struct PdAnnotations {
    inner: Vec<Annotation>,
}

/// Directed affinity graph over embedding windows.
pub struct PdGraph {
    inner: AffinityGraph,
}

/// PLDA model loaded from file.
pub struct PdPlda {
    inner: PldaModel,
}

/// Pooled scoring result over all recordings present in the reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PdDerSummary {
    /// Reference speaker time in scored frames, seconds.
    pub scored_speech: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    /// Diarization error rate; NaN when nothing was scored.
    pub der: f64,
    /// Recordings scored.
    pub recordings: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(err: &Error) -> PdStatus {
    match err {
        Error::Parse { .. } => PdStatus::Parse,
        Error::Format { .. } => PdStatus::Format,
        Error::InvalidInput(_) => PdStatus::InvalidArgument,
        Error::Numerical(_) => PdStatus::Numerical,
        Error::Config(_) => PdStatus::Config,
        Error::Missing(_) => PdStatus::Missing,
        Error::Io(_) => PdStatus::Io,
    }
}

struct Failure(PdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(PdStatus::InvalidArgument, message.into())
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PdStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            PdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| invalid("output contains a NUL byte"))
}

/// Row-major `n x n` matrix from a flat buffer.
unsafe fn square_arg(p: *const f64, n: usize, what: &str) -> Result<DMatrix<f64>, Failure> {
    let len = n.checked_mul(n).ok_or_else(|| invalid(format!("{what}: size overflows")))?;
    Ok(DMatrix::from_row_slice(n, n, slice_arg(p, len, what)?))
}

fn write_labels(partition: &Partition, out: &mut [usize]) {
    out.copy_from_slice(partition.labels());
}

/// Message of the last failed call on this thread, or NULL when the last
/// call succeeded. The pointer stays valid until the next call on the same
/// thread.
#[no_mangle]
pub extern "C" fn pd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses RTTM text into a new annotation set.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_rttm_parse(text: *const c_char, out: *mut *mut PdAnnotations) -> PdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = parse_rttm(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(PdAnnotations { inner }));
        Ok(())
    })
}

/// Number of recordings in an annotation set.
///
/// # Safety
/// `annotations` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_annotations_count(annotations: *const PdAnnotations, out: *mut usize) -> PdStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(annotations, "annotations")?.inner.len();
        Ok(())
    })
}

/// Number of segments of all recordings in an annotation set.
///
/// # Safety
/// `annotations` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_annotations_segments(annotations: *const PdAnnotations, out: *mut usize) -> PdStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(annotations, "annotations")?.inner.iter().map(Annotation::len).sum();
        Ok(())
    })
}

/// Formats an annotation set as RTTM text; free the result with
/// [`pd_string_free`].
///
/// # Safety
/// `annotations` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_rttm_write(annotations: *const PdAnnotations, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(write_rttm(&ref_arg(annotations, "annotations")?.inner))?;
        Ok(())
    })
}

/// Releases an annotation set.
///
/// # Safety
/// `annotations` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pd_annotations_free(annotations: *mut PdAnnotations) {
    if !annotations.is_null() {
        drop(Box::from_raw(annotations));
    }
}

/// Scores `hypothesis` against `reference` and pools the error times over
/// every reference recording. A recording absent from the hypothesis counts
/// as entirely missed.
///
/// # Safety
/// Both handles must be live and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_der(
    reference: *const PdAnnotations,
    hypothesis: *const PdAnnotations,
    collar: f64,
    score_overlap: bool,
    out: *mut PdDerSummary,
) -> PdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let reference = &ref_arg(reference, "reference")?.inner;
        let hypotheses: BTreeMap<&str, &Annotation> =
            ref_arg(hypothesis, "hypothesis")?.inner.iter().map(|a| (a.recording_id(), a)).collect();
        let options = ScoringOptions { collar, score_overlap };
        let mut reports = Vec::with_capacity(reference.len());
        for r in reference {
            let empty = Annotation::new(r.recording_id());
            let hyp = hypotheses.get(r.recording_id()).copied().unwrap_or(&empty);
            reports.push(der(r, hyp, None, &options)?);
        }
        if reports.is_empty() {
            *out = PdDerSummary {
                der: f64::NAN,
                ..PdDerSummary::default()
            };
            return Ok(());
        }
        let all = aggregate(&reports, None)?;
        *out = PdDerSummary {
            scored_speech: all.scored_speech,
            missed: all.missed,
            false_alarm: all.false_alarm,
            confusion: all.confusion,
            der: all.der.unwrap_or(f64::NAN),
            recordings: reports.len(),
        };
        Ok(())
    })
}

/// Builds a graph from a row-major `n x n` matrix of non-negative edge
/// weights.
///
/// # Safety
/// `weights` must point to `n * n` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_graph_from_weights(weights: *const f64, n: usize, out: *mut *mut PdGraph) -> PdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = AffinityGraph::from_weights(&square_arg(weights, n, "weights")?)?;
        *out = Box::into_raw(Box::new(PdGraph { inner }));
        Ok(())
    })
}

/// Builds a `k`-nearest-neighbour graph from a row-major `n x n` symmetric
/// similarity matrix, mapping similarities through a sigmoid with the given
/// scale and offset. `plda_scores` standardizes the scores first.
///
/// # Safety
/// `scores` must point to `n * n` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_graph_knn(
    scores: *const f64,
    n: usize,
    k: usize,
    scale: f64,
    offset: f64,
    plda_scores: bool,
    out: *mut *mut PdGraph,
) -> PdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let kind = if plda_scores { ScoreKind::Plda } else { ScoreKind::Cosine };
        let mut s = SimilarityMatrix::new("ffi", square_arg(scores, n, "scores")?, kind)?;
        if plda_scores {
            s = s.standardized();
        }
        let inner = build_knn_graph(&s, k, scale, offset)?;
        *out = Box::into_raw(Box::new(PdGraph { inner }));
        Ok(())
    })
}

/// Number of vertices of a graph.
///
/// # Safety
/// `graph` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_graph_vertices(graph: *const PdGraph, out: *mut usize) -> PdStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(graph, "graph")?.inner.len();
        Ok(())
    })
}

/// Releases a graph.
///
/// # Safety
/// `graph` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pd_graph_free(graph: *mut PdGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Path integral clustering down to `target_clusters`. Writes one cluster
/// label per vertex into `labels` (length `len`, which must equal the
/// vertex count) and the number of clusters into `clusters`.
///
/// # Safety
/// `graph` must be a live handle, `labels` must hold `len` writable values
/// and `clusters` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_pic_cluster(
    graph: *const PdGraph,
    z: f64,
    k: usize,
    target_clusters: usize,
    labels: *mut usize,
    len: usize,
    clusters: *mut usize,
) -> PdStatus {
    guard(|| {
        let graph = &ref_arg(graph, "graph")?.inner;
        let clusters = out_arg(clusters, "clusters")?;
        if len != graph.len() {
            return Err(invalid(format!("label buffer holds {len}, graph has {} vertices", graph.len())));
        }
        if labels.is_null() && len > 0 {
            return Err(null("labels"));
        }
        let result = pic_cluster(graph, &PicParams::new(z, k, target_clusters)?)?;
        if len > 0 {
            write_labels(&result.partition, std::slice::from_raw_parts_mut(labels, len));
        }
        *clusters = result.partition.num_clusters();
        Ok(())
    })
}

/// Average-linkage clustering of a row-major `n x n` similarity matrix.
/// Stops at `num_clusters` clusters when it is non-zero, otherwise when no
/// pair scores above `threshold`.
///
/// # Safety
/// `scores` must point to `n * n` readable values, `labels` to `n` writable
/// values and `clusters` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_ahc_cluster(
    scores: *const f64,
    n: usize,
    threshold: f64,
    num_clusters: usize,
    labels: *mut usize,
    clusters: *mut usize,
) -> PdStatus {
    guard(|| {
        let clusters = out_arg(clusters, "clusters")?;
        let s = SimilarityMatrix::new("ffi", square_arg(scores, n, "scores")?, ScoreKind::Plda)?;
        let stop = if num_clusters > 0 {
            AhcStop::Clusters(num_clusters)
        } else {
            AhcStop::Threshold(threshold)
        };
        let partition = ahc_cluster(&s, stop);
        if n > 0 {
            if labels.is_null() {
                return Err(null("labels"));
            }
            write_labels(&partition, std::slice::from_raw_parts_mut(labels, n));
        }
        *clusters = partition.num_clusters();
        Ok(())
    })
}

/// Loads a PLDA model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_plda_load(path: *const c_char, out: *mut *mut PdPlda) -> PdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = PldaModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(PdPlda { inner }));
        Ok(())
    })
}

/// Embedding dimension of a PLDA model.
///
/// # Safety
/// `plda` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_plda_dim(plda: *const PdPlda, out: *mut usize) -> PdStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(plda, "plda")?.inner.dim();
        Ok(())
    })
}

/// Same-speaker log-likelihood ratio of two embeddings of length `dim`.
///
/// # Safety
/// `plda` must be a live handle, `x1` and `x2` must point to `dim` readable
/// values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_plda_llr(
    plda: *const PdPlda,
    x1: *const f64,
    x2: *const f64,
    dim: usize,
    out: *mut f64,
) -> PdStatus {
    guard(|| {
        let model = &ref_arg(plda, "plda")?.inner;
        let out = out_arg(out, "out")?;
        let a = DVector::from_column_slice(slice_arg(x1, dim, "x1")?);
        let b = DVector::from_column_slice(slice_arg(x2, dim, "x2")?);
        *out = picdiar::scoring::plda_llr(model, &a, &b)?;
        Ok(())
    })
}

/// Releases a PLDA model.
///
/// # Safety
/// `plda` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pd_plda_free(plda: *mut PdPlda) {
    if !plda.is_null() {
        drop(Box::from_raw(plda));
    }
}

/// Runs the pipeline configured by the TOML file at `config_path` and
/// writes hypotheses, manifest and reports under `output_dir`. Relative
/// paths in the configuration resolve against the file's directory.
/// `workers` of 0 uses every core. `der` receives the corpus DER, or NaN
/// when no reference is configured; `failed` the number of recordings
/// that could not be processed. Either may be NULL.
///
/// # Safety
/// Both strings must be NUL-terminated; `der` and `failed` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pd_pipeline_run(
    config_path: *const c_char,
    output_dir: *const c_char,
    workers: usize,
    der: *mut f64,
    failed: *mut usize,
) -> PdStatus {
    guard(|| {
        let config = PipelineConfig::load(Path::new(str_arg(config_path, "config_path")?))?;
        let output = Path::new(str_arg(output_dir, "output_dir")?);
        let run = run_corpus(&config, &RunOptions { workers, ..RunOptions::default() })?;
        write_outputs(&run, output)?;
        if let Some(d) = der.as_mut() {
            *d = run.scores.as_ref().and_then(|s| s.all.der).unwrap_or(f64::NAN);
        }
        if let Some(f) = failed.as_mut() {
            *f = run.outcomes.len() - run.succeeded();
        }
        Ok(())
    })
}
