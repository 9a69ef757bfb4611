#ifndef PICDIAR_H
#define PICDIAR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every call.
typedef enum PdStatus {
  PD_STATUS_OK = 0,
  PD_STATUS_NULL_POINTER = 1,
  PD_STATUS_INVALID_ARGUMENT = 2,
  PD_STATUS_PARSE = 3,
  PD_STATUS_FORMAT = 4,
  PD_STATUS_NUMERICAL = 5,
  PD_STATUS_CONFIG = 6,
  PD_STATUS_MISSING = 7,
  PD_STATUS_IO = 8,
  PD_STATUS_PANIC = 9,
} PdStatus;

// Parsed RTTM content: one annotation per recording.
typedef struct PdAnnotations PdAnnotations;

// Directed affinity graph over embedding windows.
typedef struct PdGraph PdGraph;

// PLDA model loaded from file.
typedef struct PdPlda PdPlda;

// Pooled scoring result over all recordings present in the reference.
typedef struct PdDerSummary {
  // Reference speaker time in scored frames, seconds.
  double scored_speech;
  double missed;
  double false_alarm;
  double confusion;
  // Diarization error rate; NaN when nothing was scored.
  double der;
  // Recordings scored.
  size_t recordings;
} PdDerSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL when the last
// call succeeded. The pointer stays valid until the next call on the same
// thread.
const char *pd_last_error(void);

// Library version as a static NUL-terminated string.
const char *pd_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void pd_string_free(char *s);

// Parses RTTM text into a new annotation set.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum PdStatus pd_rttm_parse(const char *text, struct PdAnnotations **out);

// Number of recordings in an annotation set.
//
// # Safety
// `annotations` must be a live handle and `out` a writable pointer.
enum PdStatus pd_annotations_count(const struct PdAnnotations *annotations, size_t *out);

// Number of segments of all recordings in an annotation set.
//
// # Safety
// `annotations` must be a live handle and `out` a writable pointer.
enum PdStatus pd_annotations_segments(const struct PdAnnotations *annotations, size_t *out);

// Formats an annotation set as RTTM text; free the result with
// [`pd_string_free`].
//
// # Safety
// `annotations` must be a live handle and `out` a writable pointer.
enum PdStatus pd_rttm_write(const struct PdAnnotations *annotations, char **out);

// Releases an annotation set.
//
// # Safety
// `annotations` must be NULL or a handle not yet freed.
void pd_annotations_free(struct PdAnnotations *annotations);

// Scores `hypothesis` against `reference` and pools the error times over
// every reference recording. A recording absent from the hypothesis counts
// as entirely missed.
//
// # Safety
// Both handles must be live and `out` a writable pointer.
enum PdStatus pd_der(const struct PdAnnotations *reference,
                     const struct PdAnnotations *hypothesis,
                     double collar,
                     bool score_overlap,
                     struct PdDerSummary *out);

// Builds a graph from a row-major `n x n` matrix of non-negative edge
// weights.
//
// # Safety
// `weights` must point to `n * n` readable values and `out` be writable.
enum PdStatus pd_graph_from_weights(const double *weights, size_t n, struct PdGraph **out);

// Builds a `k`-nearest-neighbour graph from a row-major `n x n` symmetric
// similarity matrix, mapping similarities through a sigmoid with the given
// scale and offset. `plda_scores` standardizes the scores first.
//
// # Safety
// `scores` must point to `n * n` readable values and `out` be writable.
enum PdStatus pd_graph_knn(const double *scores,
                           size_t n,
                           size_t k,
                           double scale,
                           double offset,
                           bool plda_scores,
                           struct PdGraph **out);

// Number of vertices of a graph.
//
// # Safety
// `graph` must be a live handle and `out` a writable pointer.
enum PdStatus pd_graph_vertices(const struct PdGraph *graph, size_t *out);

// Releases a graph.
//
// # Safety
// `graph` must be NULL or a handle not yet freed.
void pd_graph_free(struct PdGraph *graph);

// Path integral clustering down to `target_clusters`. Writes one cluster
// label per vertex into `labels` (length `len`, which must equal the
// vertex count) and the number of clusters into `clusters`.
//
// # Safety
// `graph` must be a live handle, `labels` must hold `len` writable values
// and `clusters` must be writable.
enum PdStatus pd_pic_cluster(const struct PdGraph *graph,
                             double z,
                             size_t k,
                             size_t target_clusters,
                             size_t *labels,
                             size_t len,
                             size_t *clusters);

// Average-linkage clustering of a row-major `n x n` similarity matrix.
// Stops at `num_clusters` clusters when it is non-zero, otherwise when no
// pair scores above `threshold`.
//
// # Safety
// `scores` must point to `n * n` readable values, `labels` to `n` writable
// values and `clusters` must be writable.
enum PdStatus pd_ahc_cluster(const double *scores,
                             size_t n,
                             double threshold,
                             size_t num_clusters,
                             size_t *labels,
                             size_t *clusters);

// Loads a PLDA model file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PdStatus pd_plda_load(const char *path, struct PdPlda **out);

// Embedding dimension of a PLDA model.
//
// # Safety
// `plda` must be a live handle and `out` a writable pointer.
enum PdStatus pd_plda_dim(const struct PdPlda *plda, size_t *out);

// Same-speaker log-likelihood ratio of two embeddings of length `dim`.
//
// # Safety
// `plda` must be a live handle, `x1` and `x2` must point to `dim` readable
// values and `out` must be writable.
enum PdStatus pd_plda_llr(const struct PdPlda *plda,
                          const double *x1,
                          const double *x2,
                          size_t dim,
                          double *out);

// Releases a PLDA model.
//
// # Safety
// `plda` must be NULL or a handle not yet freed.
void pd_plda_free(struct PdPlda *plda);

// Runs the pipeline configured by the TOML file at `config_path` and
// writes hypotheses, manifest and reports under `output_dir`. Relative
// paths in the configuration resolve against the file's directory.
// `workers` of 0 uses every core. `der` receives the corpus DER, or NaN
// when no reference is configured; `failed` the number of recordings
// that could not be processed. Either may be NULL.
//
// # Safety
// Both strings must be NUL-terminated; `der` and `failed` must be NULL or
// writable.
enum PdStatus pd_pipeline_run(const char *config_path,
                              const char *output_dir,
                              size_t workers,
                              double *der,
                              size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PICDIAR_H */
