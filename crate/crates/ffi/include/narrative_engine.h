#ifndef NARRATIVE_ENGINE_H
#define NARRATIVE_ENGINE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NeStatus {
  NE_STATUS_OK = 0,
  NE_STATUS_NULL_POINTER = 1,
  NE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input outside an operation's domain (constant series, too short, ...).
   */
  NE_STATUS_DOMAIN = 3,
  NE_STATUS_DIMENSION = 4,
  NE_STATUS_NOT_FOUND = 5,
  NE_STATUS_IO = 6,
  NE_STATUS_INTERNAL = 7,
} NeStatus;

/**
 * Opaque clustering state.
 */
typedef struct NeClusterState NeClusterState;

typedef struct NeFitSummary {
  uint32_t timestep;
  size_t absorbed;
  size_t new_clusters;
  size_t merges;
} NeFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *ne_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ne_version(void);

/**
 * Creates an empty state. `similarity_threshold` in (-1, 1]; `seed` drives
 * merge-evaluation sampling.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum NeStatus ne_cluster_state_new(double similarity_threshold,
                                   uint64_t seed,
                                   struct NeClusterState **out);

/**
 * # Safety
 * `state` must come from [`ne_cluster_state_new`] and not be used again.
 */
void ne_cluster_state_free(struct NeClusterState *state);

/**
 * Fits one timestep's batch of `n` points of dimension `dim`. `ids` holds
 * `n` NUL-terminated unit ids; `vectors` holds `n * dim` floats. An empty
 * batch (`n == 0`) advances the timestep.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `summary` may be null.
 */
enum NeStatus ne_cluster_state_fit(struct NeClusterState *state,
                                   const char *const *ids,
                                   const float *vectors,
                                   size_t n,
                                   size_t dim,
                                   struct NeFitSummary *summary);

/**
 * Number of clusters ever created, or only those still active.
 *
 * # Safety
 * `state` and `out` must be valid.
 */
enum NeStatus ne_cluster_state_cluster_count(const struct NeClusterState *state,
                                             bool active_only,
                                             size_t *out);

/**
 * Copies the current centroid of `cluster` into `out` (capacity `len`).
 * `written` receives the dimension; with `out == NULL` only the dimension
 * is reported.
 *
 * # Safety
 * `out` must be valid for `len` floats when non-null; `written` must be valid.
 */
enum NeStatus ne_cluster_state_centroid(const struct NeClusterState *state,
                                        uint64_t cluster,
                                        float *out,
                                        size_t len,
                                        size_t *written);

/**
 * Active cluster currently holding `unit_id` (following merges).
 *
 * # Safety
 * `unit_id` must be NUL-terminated; `out` must be valid.
 */
enum NeStatus ne_cluster_state_cluster_of(const struct NeClusterState *state,
                                          const char *unit_id,
                                          uint64_t *out);

/**
 * # Safety
 * `a` and `b` must be valid for `len` floats; `out` must be valid.
 */
enum NeStatus ne_cosine_similarity(const float *a, const float *b, size_t len, double *out);

/**
 * Spearman rank correlation with its two-sided p-value.
 *
 * # Safety
 * `x` and `y` must be valid for `n` doubles; `rho` and `p_value` must be valid.
 */
enum NeStatus ne_spearman(const double *x, const double *y, size_t n, double *rho, double *p_value);

/**
 * Granger F-test of "x helps predict y" at lag order `lag`.
 *
 * # Safety
 * `x` and `y` must be valid for `n` doubles; `f` and `p_value` must be valid.
 */
enum NeStatus ne_granger(const double *x,
                         const double *y,
                         size_t n,
                         size_t lag,
                         double *f,
                         double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NARRATIVE_ENGINE_H */
