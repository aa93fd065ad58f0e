#ifndef RELAXFILL_H
#define RELAXFILL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  /**
   * Null pointer, bad length or otherwise unusable argument.
   */
  RF_STATUS_INVALID_ARGUMENT = 1,
  /**
   * A configuration value is out of range.
   */
  RF_STATUS_CONFIG = 2,
  /**
   * A file or string could not be parsed.
   */
  RF_STATUS_PARSE = 3,
  RF_STATUS_IO = 4,
  RF_STATUS_DIMENSION = 5,
  /**
   * Factorization or another numerical step failed.
   */
  RF_STATUS_NUMERICAL = 6,
  /**
   * The solver stopped without meeting its criteria.
   */
  RF_STATUS_SOLVER_FAILED = 7,
  /**
   * A `compare` ordering check failed.
   */
  RF_STATUS_CHECK = 8,
  /**
   * Internal error; the library state is unaffected.
   */
  RF_STATUS_PANIC = 9,
} RfStatus;

typedef enum RfLayout {
  RF_LAYOUT_BLOCK = 0,
  RF_LAYOUT_RECEIVER_BY_SOURCE = 1,
} RfLayout;

/**
 * Run configuration.
 */
typedef struct RfConfig RfConfig;

/**
 * Observed data with its operators.
 */
typedef struct RfProblem RfProblem;

/**
 * Completed tensor and summary of one solve.
 */
typedef struct RfResult RfResult;

/**
 * Scalar outcome of a solve. RMS values are NaN without a truth tensor.
 */
typedef struct RfSummary {
  double terminal_feasibility;
  double rms_obs;
  double rms_int;
  double sigma;
  size_t iterations;
  bool converged;
  bool failed;
} RfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * Valid until the next call into the library on the same thread.
 */
const char *rf_last_error(void);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum RfStatus rf_config_default(struct RfConfig **out);

/**
 * Parses TOML text. Relative paths inside resolve against the working
 * directory.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum RfStatus rf_config_parse(const char *toml, struct RfConfig **out);

/**
 * Reads a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RfStatus rf_config_load(const char *path, struct RfConfig **out);

/**
 * Sets the seed of every scenario stream.
 *
 * # Safety
 * `config` must come from this library and not be freed.
 */
enum RfStatus rf_config_set_seed(struct RfConfig *config, uint64_t seed);

/**
 * Selects the solver by name: `vr`, `vr_exact`, `fista`, `lbfgs`,
 * `smooth_only` or `lowrank_only`.
 *
 * # Safety
 * `config` must come from this library; `name` must be NUL-terminated.
 */
enum RfStatus rf_config_set_solver(struct RfConfig *config, const char *name);

/**
 * # Safety
 * `config` must come from this library or be null.
 */
void rf_config_free(struct RfConfig *config);

/**
 * Builds a problem from the synthetic scenario of `config`, truth included.
 *
 * # Safety
 * `config` must come from this library; `out` must be writable.
 */
enum RfStatus rf_problem_generate(const struct RfConfig *config, struct RfProblem **out);

/**
 * Builds a problem from caller data. `values` and `mask` hold
 * `nx·ny·n_s` entries; nonzero mask bytes mark observed entries. `truth`
 * may be null.
 *
 * # Safety
 * Non-null arrays must hold `nx·ny·n_s` readable elements; `out` must be
 * writable.
 */
enum RfStatus rf_problem_new(size_t nx,
                             size_t ny,
                             size_t n_s,
                             const double *values,
                             const uint8_t *mask,
                             const double *truth,
                             double sigma,
                             enum RfLayout layout,
                             struct RfProblem **out);

/**
 * Matrix shape, observation count and misfit budget.
 *
 * # Safety
 * `problem` must come from this library; each output pointer must be
 * writable or null.
 */
enum RfStatus rf_problem_info(const struct RfProblem *problem,
                              size_t *rows,
                              size_t *cols,
                              size_t *n_obs,
                              double *sigma);

/**
 * # Safety
 * `problem` must come from this library or be null.
 */
void rf_problem_free(struct RfProblem *problem);

/**
 * Runs the configured solver. A result is produced even when the solver
 * reports failure; the status is then `SolverFailed`.
 *
 * # Safety
 * `problem` and `config` must come from this library; `out` must be
 * writable.
 */
enum RfStatus rf_solve(const struct RfProblem *problem,
                       const struct RfConfig *config,
                       struct RfResult **out);

/**
 * Copies the completed tensor into `dst`, which holds `len` doubles.
 *
 * # Safety
 * `result` must come from this library; `dst` must hold `len` writable
 * doubles.
 */
enum RfStatus rf_result_tensor(const struct RfResult *result, double *dst, size_t len);

/**
 * # Safety
 * `result` must come from this library; `out` must be writable.
 */
enum RfStatus rf_result_summary(const struct RfResult *result, struct RfSummary *out);

/**
 * # Safety
 * `result` must come from this library or be null.
 */
void rf_result_free(struct RfResult *result);

/**
 * Runs a command-line command (`generate`, `solve`, `compare` or `svd`)
 * with `config` writing into `out_dir`.
 *
 * # Safety
 * `command` and `out_dir` must be NUL-terminated; `config` must come from
 * this library.
 */
enum RfStatus rf_run_command(const char *command,
                             const struct RfConfig *config,
                             const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELAXFILL_H */
