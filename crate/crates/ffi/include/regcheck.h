#ifndef REGCHECK_H
#define REGCHECK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RC_STAT_CVM 0

#define RC_STAT_TCVM 1

#define RC_METHOD_BOOTSTRAP 0

#define RC_METHOD_ASYMPTOTIC 1

#define RC_WEIGHT_OMNIBUS 0

#define RC_WEIGHT_DIRECTIONAL 1

#define RC_WEIGHT_FIXED 2

#define RC_MEAN_LINEAR 0

#define RC_MEAN_SINGLE_INDEX_QUADRATIC 1

#define RC_MEAN_LINEAR_EXP_INDEX 2

#define RC_VAR_CONSTANT 0

#define RC_VAR_EXP_CONSTANT 1

#define RC_VAR_LOG_LINEAR 2

typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  RC_STATUS_INVALID_INPUT = 2,
  RC_STATUS_DIMENSION = 3,
  RC_STATUS_NON_FINITE = 4,
  RC_STATUS_SINGULAR = 5,
  RC_STATUS_NO_CONVERGENCE = 6,
  RC_STATUS_NON_POSITIVE_VARIANCE = 7,
  RC_STATUS_DEGENERATE_WEIGHT = 8,
  RC_STATUS_UNSUPPORTED = 9,
  RC_STATUS_BOOTSTRAP = 10,
  RC_STATUS_IO = 11,
  RC_STATUS_PANIC = 12,
} RcStatus;

/**
 * Opaque dataset handle.
 */
typedef struct RcDataset RcDataset;

/**
 * Test settings. Start from [`rc_options_default`].
 */
typedef struct RcOptions {
  /**
   * `RC_STAT_*`.
   */
  int32_t statistic;
  /**
   * `RC_METHOD_*`.
   */
  int32_t method;
  /**
   * Bootstrap replications.
   */
  size_t bootstrap_size;
  double level;
  /**
   * Bandwidth constant `c` in `h = c n^(-1/10)`.
   */
  double bandwidth_c;
  double trim;
  double v_n;
  uint64_t seed;
  /**
   * `RC_WEIGHT_*`.
   */
  int32_t weight;
  /**
   * Alternative class for directional weights: `RC_MEAN_*` in the mean
   * test, `RC_VAR_*` in the variance test.
   */
  int32_t alternative;
  /**
   * `g(X_i)` for fixed weights, `fixed_len` values; may be null otherwise.
   */
  const double *fixed_weight;
  size_t fixed_len;
  /**
   * Nonzero keeps the original-sample weight in the bootstrap.
   */
  int32_t original_bootstrap_weight;
} RcOptions;

typedef struct RcResult {
  double statistic;
  double critical_value;
  double p_value;
  int32_t reject;
  double level;
  double rho_hat;
  /**
   * NaN for the raw statistic.
   */
  double bandwidth;
  size_t n;
  size_t d;
} RcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Default settings: bootstrap CvM with 300 replications at level 0.05.
 */
struct RcOptions rc_options_default(void);

/**
 * Copy `n` rows of `d` predictors (row-major `x`) and `n` responses into a
 * new dataset. Free it with [`rc_dataset_free`].
 *
 * # Safety
 * `x` must point to `n * d` doubles and `y` to `n` doubles; `out` must be
 * writable.
 */
enum RcStatus rc_dataset_new(const double *x,
                             const double *y,
                             size_t n,
                             size_t d,
                             struct RcDataset **out);

/**
 * # Safety
 * `ds` must come from [`rc_dataset_new`] and not be freed twice. Null is a
 * no-op.
 */
void rc_dataset_free(struct RcDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t rc_dataset_n(const struct RcDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t rc_dataset_d(const struct RcDataset *ds);

/**
 * Test the mean model `model` (`RC_MEAN_*`).
 *
 * # Safety
 * `ds` must be a live handle, `opts` and `out` valid pointers, and
 * `opts.fixed_weight` point to `opts.fixed_len` doubles when used.
 */
enum RcStatus rc_test_mean(const struct RcDataset *ds,
                           int32_t model,
                           const struct RcOptions *opts,
                           struct RcResult *out);

/**
 * Test the variance model `vmodel` (`RC_VAR_*`) with mean model `model`.
 *
 * # Safety
 * As [`rc_test_mean`].
 */
enum RcStatus rc_test_variance(const struct RcDataset *ds,
                               int32_t model,
                               int32_t vmodel,
                               const struct RcOptions *opts,
                               struct RcResult *out);

/**
 * Quantile of `int_0^1 B(t)^2 dt` from the default table. The first call
 * builds the table unless `REGCHECK_CACHE_DIR` holds a copy.
 *
 * # Safety
 * `out` must be writable.
 */
enum RcStatus rc_brownian_cvm_quantile(double level, double *out);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *rc_last_error_message(void);

/**
 * Library version, static.
 */
const char *rc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REGCHECK_H */
