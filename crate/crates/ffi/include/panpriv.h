#ifndef PANPRIV_H
#define PANPRIV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PpStatus {
  PP_STATUS_OK = 0,
  PP_STATUS_NULL_POINTER = 1,
  PP_STATUS_INVALID_ARGUMENT = 2,
  PP_STATUS_IO = 3,
  PP_STATUS_CORRUPT = 4,
  PP_STATUS_MODE_VIOLATION = 5,
  PP_STATUS_OUT_OF_RANGE = 6,
  PP_STATUS_NUMERIC = 7,
  PP_STATUS_UNSUPPORTED = 8,
  PP_STATUS_PANIC = 9,
} PpStatus;

/**
 * Stable-matrix calibration shared by distinct-count sketches.
 */
typedef struct PpCalibration PpCalibration;

/**
 * Any estimator: exact, distinct count, cropped sum, heavy hitters or dot pair.
 */
typedef struct PpEstimator PpEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pp_version(void);

/**
 * Message of the last failure on this thread, or null if none. Valid until
 * the next failing call on the same thread.
 */
const char *pp_last_error_message(void);

/**
 * Frees a buffer returned by the library.
 *
 * # Safety
 * `ptr` and `len` must come from a single call of this library, or `ptr`
 * must be null.
 */
void pp_bytes_free(uint8_t *ptr, size_t len);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum PpStatus pp_calibration_compute(double p,
                                     size_t r,
                                     uint64_t m,
                                     uint64_t seed,
                                     uint64_t samples,
                                     struct PpCalibration **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum PpStatus pp_calibration_load(const char *path, struct PpCalibration **out);

/**
 * # Safety
 * `cal` must be a live handle; `path` a NUL-terminated string.
 */
enum PpStatus pp_calibration_save(const struct PpCalibration *cal, const char *path);

/**
 * Median scale of `|X|^p` for the calibration.
 *
 * # Safety
 * `cal` must be a live handle; `out` valid for writes.
 */
enum PpStatus pp_calibration_sfp(const struct PpCalibration *cal, double *out);

/**
 * # Safety
 * `cal` must be a live handle or null; it is invalid afterwards.
 */
void pp_calibration_free(struct PpCalibration *cal);

/**
 * Exact, non-private distinct counter over `[0, m)`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PpStatus pp_exact_new(uint64_t m, struct PpEstimator **out);

/**
 * Distinct-count sketch. `disable_noise` builds it without privacy.
 *
 * # Safety
 * `cal` must be a live handle; `out` valid for writes. The sketch keeps
 * its own reference, so `cal` may be freed afterwards.
 */
enum PpStatus pp_distinct_new(const struct PpCalibration *cal,
                              double z,
                              double alpha_total,
                              double approx_eps,
                              bool disable_noise,
                              uint64_t noise_seed,
                              struct PpEstimator **out);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum PpStatus pp_cropped_sum_new(size_t h,
                                 uint64_t tau,
                                 double priv_eps,
                                 uint64_t seed,
                                 struct PpEstimator **out);

/**
 * Heavy-hitters count. Pass the stream mass in `f1`, or 0 there and an
 * upper bound in `u0` when the mass is not known in advance.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PpStatus pp_hh_new(double k,
                        double c,
                        double beta,
                        double delta,
                        double priv_eps,
                        uint64_t hash_key,
                        uint64_t f1,
                        uint64_t u0,
                        uint64_t seed,
                        struct PpEstimator **out);

/**
 * Cropped dot-product pair. [`pp_estimator_update`] feeds both sides,
 * giving `T_2`; the side-specific calls feed one.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PpStatus pp_dot_new(size_t m,
                         uint64_t tau,
                         double priv_eps,
                         uint64_t seed,
                         struct PpEstimator **out);

/**
 * Record kind of the estimator: 2 exact, 3 distinct, 4 cropped sum,
 * 5 heavy hitters, 6 dot pair.
 *
 * # Safety
 * `est` must be a live handle; `out` valid for writes.
 */
enum PpStatus pp_estimator_kind(const struct PpEstimator *est, uint8_t *out);

/**
 * # Safety
 * `est` must be a live handle.
 */
enum PpStatus pp_estimator_update(struct PpEstimator *est, uint64_t item, int64_t delta);

/**
 * # Safety
 * `est` must be a live dot-pair handle.
 */
enum PpStatus pp_dot_update_left(struct PpEstimator *est, uint64_t item, int64_t delta);

/**
 * # Safety
 * `est` must be a live dot-pair handle.
 */
enum PpStatus pp_dot_update_right(struct PpEstimator *est, uint64_t item, int64_t delta);

/**
 * # Safety
 * `est` must be a live handle; `out` valid for writes.
 */
enum PpStatus pp_estimator_estimate(const struct PpEstimator *est, double *out);

/**
 * Serializes the full state. Release the buffer with [`pp_bytes_free`].
 *
 * # Safety
 * `est` must be a live handle; `out_ptr` and `out_len` valid for writes.
 */
enum PpStatus pp_estimator_snapshot(const struct PpEstimator *est,
                                    uint8_t **out_ptr,
                                    size_t *out_len);

/**
 * Rebuilds an estimator from a snapshot. Randomness used after the restore
 * comes from `fork_seed`.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `out` valid for writes.
 */
enum PpStatus pp_estimator_restore(const uint8_t *bytes,
                                   size_t len,
                                   uint64_t fork_seed,
                                   struct PpEstimator **out);

/**
 * # Safety
 * `est` must be a live handle or null; it is invalid afterwards.
 */
void pp_estimator_free(struct PpEstimator *est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANPRIV_H */
