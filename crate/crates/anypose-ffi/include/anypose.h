/* C bindings for the anypose forecasting engine. */

#pragma once

/* Generated with cbindgen:0.27.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible FFI call.
 */
typedef enum ApStatus {
  ApOk = 0,
  /**
   * A required pointer argument was null.
   */
  ApNullArgument = 1,
  /**
   * An argument failed validation (sizes, times, history length).
   */
  ApInvalidArgument = 2,
  /**
   * The checkpoint could not be parsed or is inconsistent.
   */
  ApParseError = 3,
  /**
   * The solver failed (divergence or step limit).
   */
  ApSolveError = 4,
  /**
   * File I/O failed.
   */
  ApIoError = 5,
  /**
   * The callee panicked; state may be stale but memory is intact.
   */
  ApInternalError = 6,
} ApStatus;

/**
 * Opaque forecaster handle.
 */
typedef struct ApModel ApModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static storage, do not free.
 */
const char *ap_version(void);

/**
 * Description of the most recent error on this thread; valid until the
 * next failing call on the same thread. Do not free.
 */
const char *ap_last_error_message(void);

/**
 * Load a model from a checkpoint file. On success writes a handle to
 * `out_model`; free it with [`ap_model_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated UTF-8 string and `out_model` a
 * valid pointer to writable storage.
 */
enum ApStatus ap_model_load(const char *path, struct ApModel **out_model);

/**
 * Load a model from checkpoint JSON held in memory.
 *
 * # Safety
 * `json` must be a valid NUL-terminated UTF-8 string and `out_model` a
 * valid pointer to writable storage.
 */
enum ApStatus ap_model_from_json(const char *json, struct ApModel **out_model);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be a handle returned by a load function, not yet freed.
 */
void ap_model_free(struct ApModel *model);

/**
 * Model order (1 or 2); 0 when `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int32_t ap_model_order(const struct ApModel *model);

/**
 * Number of joints per pose; 0 when `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t ap_model_m_joints(const struct ApModel *model);

/**
 * Observed poses required to form the initial state (1 or 2); 0 when
 * `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t ap_model_required_history(const struct ApModel *model);

/**
 * Frame interval the model was trained at, in seconds; NaN when null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
double ap_model_frame_interval_sec(const struct ApModel *model);

/**
 * Forecast poses at `n_times` future times from `n_observed` trailing
 * observed poses.
 *
 * `observed` holds `n_observed * 3M` doubles (oldest pose first) sampled
 * `frame_interval_sec` apart; `times` holds strictly positive query times
 * in seconds after the last observed pose; `out_poses` receives
 * `n_times * 3M` doubles, one forecast pose per query time in ascending
 * time order. `times` must be sorted ascending without duplicates.
 *
 * # Safety
 * All pointers must be valid for the stated element counts; `out_poses`
 * must be writable and must not alias the inputs.
 */
enum ApStatus ap_forecast(const struct ApModel *model,
                          const double *observed,
                          uintptr_t n_observed,
                          double frame_interval_sec,
                          const double *times,
                          uintptr_t n_times,
                          double *out_poses);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
