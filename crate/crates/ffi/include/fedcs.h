#ifndef FEDCS_H
#define FEDCS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcsStatus {
  FCS_STATUS_OK = 0,
  FCS_STATUS_NULL_POINTER = 1,
  FCS_STATUS_SHAPE = 2,
  FCS_STATUS_VALIDATION = 3,
  FCS_STATUS_NUMERIC = 4,
  FCS_STATUS_FORMAT = 5,
  FCS_STATUS_PARTITION = 6,
  FCS_STATUS_CONFIG = 7,
  FCS_STATUS_IO = 8,
  FCS_STATUS_BUFFER_TOO_SMALL = 9,
  FCS_STATUS_PANIC = 10,
} FcsStatus;

/**
 * A configured simulation and its most recent evaluation.
 */
typedef struct FcsExperiment FcsExperiment;

/**
 * Streaming alignment learner (`S`, `Φ`, global mean).
 */
typedef struct FcsRaState FcsRaState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fcs_last_error(void);

/**
 * Creates an uninitialized alignment state for `dim`-wide latents and a
 * rank-`rank` projection. `S` and `Φ` are set up on the first batch.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum FcsStatus fcs_ra_new(size_t dim,
                          size_t rank,
                          double eta,
                          double lambda,
                          uint64_t seed,
                          struct FcsRaState **out);

/**
 * Runs one alignment pass over an `n × dim` batch. When `p_out` is not
 * NULL the resulting `dim × rank` projection is written there
 * (`p_cap` values available).
 *
 * # Safety
 * `z` must hold `n * dim` values; `p_out`, if not NULL, `p_cap` values.
 */
enum FcsStatus fcs_ra_align_batch(struct FcsRaState *state,
                                  const double *z,
                                  size_t n,
                                  size_t dim,
                                  double *p_out,
                                  size_t p_cap);

/**
 * Writes the current `dim × rank` projection `P = SΦ`.
 *
 * # Safety
 * `out` must hold `cap` values.
 */
enum FcsStatus fcs_ra_projection(const struct FcsRaState *state, double *out, size_t cap);

/**
 * One step of the whitening iteration with an explicit symmetric
 * `dim × dim` scatter. Initializes the state first if needed.
 *
 * # Safety
 * `scatter` must hold `dim * dim` values.
 */
enum FcsStatus fcs_ra_update_s(struct FcsRaState *state, const double *scatter, size_t dim);

/**
 * Copies the current `dim × dim` whitening matrix `S`.
 *
 * # Safety
 * `out` must hold `cap` values.
 */
enum FcsStatus fcs_ra_s(const struct FcsRaState *state, double *out, size_t cap);

/**
 * # Safety
 * `state` must be NULL or a handle from [`fcs_ra_new`] not yet freed.
 */
void fcs_ra_free(struct FcsRaState *state);

/**
 * Support-weighted F1 of `n` predictions over `classes` classes.
 *
 * # Safety
 * `y_true` and `y_pred` must hold `n` values; `out` one.
 */
enum FcsStatus fcs_weighted_f1(const uint32_t *y_true,
                               const uint32_t *y_pred,
                               size_t n,
                               size_t classes,
                               double *out);

/**
 * Support-weighted one-vs-rest AUC. `scores` is `n × classes` with rows
 * summing to 1. `laplace` non-zero adds the pseudo-sample for classes
 * absent from `y_true`; zero leaves them out.
 *
 * # Safety
 * `y_true` must hold `n` values, `scores` `n * classes`, `out` one.
 */
enum FcsStatus fcs_weighted_auc(const uint32_t *y_true,
                                const double *scores,
                                size_t n,
                                size_t classes,
                                int32_t laplace,
                                double *out);

/**
 * Builds an experiment from a JSON configuration (same schema as the CLI).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` valid for one write.
 */
enum FcsStatus fcs_experiment_from_json(const char *json, struct FcsExperiment **out);

/**
 * Runs one round. `finished` (optional) receives 1 once all rounds are done.
 *
 * # Safety
 * `exp` must be a live handle; `finished` NULL or valid for one write.
 */
enum FcsStatus fcs_experiment_step(struct FcsExperiment *exp, int32_t *finished);

/**
 * Runs all remaining rounds.
 *
 * # Safety
 * `exp` must be a live handle.
 */
enum FcsStatus fcs_experiment_run(struct FcsExperiment *exp);

/**
 * Index of the next round to run.
 *
 * # Safety
 * `exp` must be a live handle; `out` valid for one write.
 */
enum FcsStatus fcs_experiment_round(const struct FcsExperiment *exp, size_t *out);

/**
 * Most recent round report as JSON ("null" before the first evaluation).
 * `len` receives the byte length excluding the terminating NUL; if `cap`
 * is too small nothing is copied and `FCS_STATUS_BUFFER_TOO_SMALL` is
 * returned, so callers can query with `buf = NULL, cap = 0` first.
 *
 * # Safety
 * `buf` must hold `cap` bytes; `len` valid for one write.
 */
enum FcsStatus fcs_experiment_report_json(const struct FcsExperiment *exp,
                                          char *buf,
                                          size_t cap,
                                          size_t *len);

/**
 * # Safety
 * `exp` must be NULL or a handle not yet freed.
 */
void fcs_experiment_free(struct FcsExperiment *exp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCS_H */
