#ifndef MSCT_H
#define MSCT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of slices in a bundle.
 */
#define MSCT_BUNDLE_LEN 8

/**
 * Result code of every fallible call.
 */
typedef enum MsctStatus {
  MSCT_STATUS_OK = 0,
  MSCT_STATUS_NULL_POINTER = 1,
  MSCT_STATUS_INVALID_ARGUMENT = 2,
  MSCT_STATUS_IO = 3,
  MSCT_STATUS_FORMAT = 4,
  MSCT_STATUS_REJECTED = 5,
  MSCT_STATUS_NUMERIC = 6,
  MSCT_STATUS_INTERNAL = 7,
} MsctStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct MsctModel MsctModel;

/**
 * A decoded scan volume.
 */
typedef struct MsctScan MsctScan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Owned by the library.
 */
const char *msct_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *msct_version(void);

/**
 * Reads an `MSCT` scan file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MsctStatus msct_scan_read(const char *path, struct MsctScan **out);

/**
 * Releases a scan. Null is ignored.
 *
 * # Safety
 * `scan` must come from [`msct_scan_read`] and not be used afterwards.
 */
void msct_scan_free(struct MsctScan *scan);

/**
 * Width, height and slice count of a scan.
 *
 * # Safety
 * `scan` must be a live handle; the out pointers must be writable.
 */
enum MsctStatus msct_scan_dims(const struct MsctScan *scan,
                               size_t *width,
                               size_t *height,
                               size_t *depth);

/**
 * Validates a scan and selects its eight slices.
 *
 * Writes the chosen slice indices to `indices` (8 entries). When `pixels` is
 * non-null it receives the processed slices, `8 * resolution^2` values in
 * slice then row-major order. A scan that fails validation returns
 * `MSCT_STATUS_REJECTED`.
 *
 * # Safety
 * `scan` must be a live handle; `indices` must hold 8 values and `pixels`,
 * if given, `8 * resolution * resolution`.
 */
enum MsctStatus msct_scan_preprocess(const struct MsctScan *scan,
                                     double threshold,
                                     size_t resolution,
                                     size_t *indices,
                                     double *pixels);

/**
 * Loads a checkpoint written by `msct train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MsctStatus msct_model_load(const char *path, struct MsctModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`msct_model_load`] and not be used afterwards.
 */
void msct_model_free(struct MsctModel *model);

/**
 * Input side length the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t msct_model_resolution(const struct MsctModel *model);

/**
 * COVID probability for one bundle of `8 * resolution^2` pixels in [0, 1].
 *
 * # Safety
 * `model` must be a live handle, `pixels` must hold `len` values and `out`
 * must be writable.
 */
enum MsctStatus msct_model_predict(const struct MsctModel *model,
                                   const double *pixels,
                                   size_t len,
                                   double *out);

/**
 * Kernel-density slice selection over `n` lung areas of consecutive slices.
 *
 * # Safety
 * `areas` must hold `n` values and `out` 8.
 */
enum MsctStatus msct_kds_select(const size_t *areas, size_t n, size_t *out);

/**
 * AUC-ROC of `n` scores against 0/1 labels (1 = COVID).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum MsctStatus msct_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Mean over `n` sources of the average of COVID and non-COVID F1.
 *
 * # Safety
 * `f1_covid` and `f1_noncovid` must hold `n` values; `out` must be writable.
 */
enum MsctStatus msct_final_score(const double *f1_covid,
                                 const double *f1_noncovid,
                                 size_t n,
                                 double *out);

/**
 * Binary cross-entropy of a logit against a 0/1 label.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsctStatus msct_bce(double logit, uint8_t label, double *out);

/**
 * Logit-adjusted cross-entropy of `n` source logits with priors `priors`
 * (positive, summing to 1) for true source `target`.
 *
 * # Safety
 * `logits` and `priors` must hold `n` values; `out` must be writable.
 */
enum MsctStatus msct_logit_adjusted_ce(const double *logits,
                                       const double *priors,
                                       size_t n,
                                       size_t target,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSCT_H */
