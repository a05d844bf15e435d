#ifndef ARSQ_H
#define ARSQ_H

/* generated by cbindgen from arsq-ffi; do not edit */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum ArsqStatus {
  ARSQ_STATUS_OK = 0,
  /**
   * bad argument (null pointer, wrong length, invalid config)
   */
  ARSQ_STATUS_INVALID_ARGUMENT = 1,
  /**
   * numerical failure (divergence, non-finite gradients)
   */
  ARSQ_STATUS_NUMERICAL = 2,
  /**
   * I/O or environment failure
   */
  ARSQ_STATUS_IO = 3,
} ArsqStatus;

/**
 * Opaque discretization lattice handle.
 */
typedef struct ArsqActionSpec ArsqActionSpec;

/**
 * Opaque trained-policy handle (model plus its sampling stream).
 */
typedef struct ArsqPolicy ArsqPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread; valid until the next failing call.
 */
const char *arsq_last_error_message(void);

/**
 * Create a coarse-to-fine action lattice.
 *
 * # Safety
 * `low` and `high` must point to `dims` readable f64s; `out` must be a
 * valid location for one pointer.
 */
enum ArsqStatus arsq_action_spec_new(uintptr_t dims,
                                     const double *low,
                                     const double *high,
                                     uintptr_t bins_per_level,
                                     uintptr_t levels,
                                     struct ArsqActionSpec **out);

/**
 * # Safety
 * `spec` must be a pointer from [`arsq_action_spec_new`], not yet freed.
 */
void arsq_action_spec_free(struct ArsqActionSpec *spec);

/**
 * Fine bins per dimension (`B^L`).
 *
 * # Safety
 * `spec` must be a live handle.
 */
uintptr_t arsq_action_spec_fine_bins(const struct ArsqActionSpec *spec);

/**
 * Discretize a continuous action; writes `dims * levels` digits row-major
 * (dimension outer, level inner).
 *
 * # Safety
 * `values` must hold `dims` f64s and `out_indices` room for
 * `dims * levels` u32s; `spec` must be a live handle.
 */
enum ArsqStatus arsq_encode(const struct ArsqActionSpec *spec,
                            const double *values,
                            uintptr_t values_len,
                            uint32_t *out_indices,
                            uintptr_t out_len);

/**
 * Decode multi-level digits back to the fine-bin centers.
 *
 * # Safety
 * `indices` must hold `dims * levels` u32s and `out_values` room for
 * `dims` f64s; `spec` must be a live handle.
 */
enum ArsqStatus arsq_decode(const struct ArsqActionSpec *spec,
                            const uint32_t *indices,
                            uintptr_t indices_len,
                            double *out_values,
                            uintptr_t out_len);

/**
 * Load a trained policy from a resolved config file and a checkpoint.
 *
 * # Safety
 * `config_path` and `checkpoint_path` must be NUL-terminated strings;
 * `out` must be a valid location for one pointer.
 */
enum ArsqStatus arsq_policy_load(const char *config_path,
                                 const char *checkpoint_path,
                                 uint64_t seed,
                                 struct ArsqPolicy **out);

/**
 * # Safety
 * `policy` must be a pointer from [`arsq_policy_load`], not yet freed.
 */
void arsq_policy_free(struct ArsqPolicy *policy);

/**
 * Observation width the policy expects.
 *
 * # Safety
 * `policy` must be a live handle.
 */
uintptr_t arsq_policy_obs_width(const struct ArsqPolicy *policy);

/**
 * Action dimensionality the policy emits.
 *
 * # Safety
 * `policy` must be a live handle.
 */
uintptr_t arsq_policy_action_dims(const struct ArsqPolicy *policy);

/**
 * Select a continuous action for an observation; `greedy = false` samples
 * from the softened policy.
 *
 * # Safety
 * `obs` must hold `obs_len` f64s matching the policy's observation width;
 * `out_action` must have room for the policy's action dimensionality.
 */
enum ArsqStatus arsq_policy_select(struct ArsqPolicy *policy,
                                   const double *obs,
                                   uintptr_t obs_len,
                                   bool greedy,
                                   double *out_action,
                                   uintptr_t out_len);

/**
 * Run a full training job from a config file, writing artifacts to
 * `out_dir` (metrics.csv, checkpoint.bin, config_resolved.txt).
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum ArsqStatus arsq_train_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ARSQ_H */
