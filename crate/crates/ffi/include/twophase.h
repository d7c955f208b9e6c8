#ifndef TWOPHASE_H
#define TWOPHASE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome family for [`tp_glm_fit`].
typedef enum {
  TP_FAMILY_LINEAR = 0,
  TP_FAMILY_LOGISTIC = 1,
} TpFamily;

// Simulation scenario for [`tp_pseudo_true`].
typedef enum {
  TP_SCENARIO_CASE_CONTROL = 0,
  TP_SCENARIO_SURROGATE_ADDITIVE = 1,
  TP_SCENARIO_SURROGATE_MULTIPLICATIVE = 2,
} TpScenario;

// Result code of every call.
typedef enum {
  TP_STATUS_OK = 0,
  // Null pointer, bad dimension or out-of-range argument.
  TP_STATUS_INVALID_ARGUMENT = 1,
  TP_STATUS_NON_CONVERGENCE = 2,
  TP_STATUS_SINGULAR_DESIGN = 3,
  // Calibration failed or auxiliaries are collinear.
  TP_STATUS_CALIBRATION_FAILURE = 4,
  TP_STATUS_DEGENERATE_VARIANCE = 5,
  TP_STATUS_CONFIG_ERROR = 6,
  TP_STATUS_IO_ERROR = 7,
  TP_STATUS_DATA_ERROR = 8,
  // A Rust panic was caught at the boundary.
  TP_STATUS_INTERNAL_ERROR = 9,
} TpStatus;

// Opaque experiment configuration.
typedef struct TpExperiment TpExperiment;

// Opaque fitted regression.
typedef struct TpGlmFit TpGlmFit;

// Opaque Monte Carlo report.
typedef struct TpReport TpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tp_version(void);

// Copies the last error message of this thread into `buf` (truncated,
// always NUL-terminated when `len > 0`) and returns the full message
// length, or 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t tp_last_error_message(char *buf, size_t len);

// Fits a linear or logistic regression by estimating equations.
// `x` is `n × p` row-major and already contains any intercept column;
// `weights` may be null for unit weights.
//
// # Safety
// Array arguments must point to the stated number of values; `out` must be writable.
TpStatus tp_glm_fit(TpFamily family,
                    const double *x,
                    size_t n,
                    size_t p,
                    const double *y,
                    const double *weights,
                    TpGlmFit **out);

// Number of coefficients of a fit (0 for a null handle).
//
// # Safety
// `fit` must be null or a live handle from [`tp_glm_fit`].
size_t tp_glm_fit_ncoef(const TpGlmFit *fit);

// Copies the `p` coefficients into `out`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `p` values.
TpStatus tp_glm_fit_coefficients(const TpGlmFit *fit, double *out, size_t p);

// Copies the sandwich standard errors into `out`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `p` values.
TpStatus tp_glm_fit_sandwich_se(const TpGlmFit *fit, double *out, size_t p);

// Copies the `n × p` influence matrix, row-major, into `out`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `n * p` values.
TpStatus tp_glm_fit_influence(const TpGlmFit *fit, double *out, size_t n, size_t p);

// Releases a fit.
//
// # Safety
// `fit` must be null or a handle not yet freed.
void tp_glm_fit_free(TpGlmFit *fit);

// Raking calibration of design weights. `aux` is the `n × q` cohort
// auxiliary matrix (a constant column is added), `sampled[i]` is nonzero
// for phase-two units and `pi` holds inclusion probabilities. On success
// `g_out[i]` is the raking factor of unit `i` (0 for unsampled units) and
// `max_residual` the largest scaled constraint violation.
//
// # Safety
// Arrays must have the stated lengths; `max_residual` may be null.
TpStatus tp_rake(const double *aux,
                 size_t n,
                 size_t q,
                 const uint8_t *sampled,
                 const double *pi,
                 double *g_out,
                 double *max_residual);

// Rubin's rules over `m` completed-data analyses. `estimates` and
// `variances` are `m × p` row-major; `theta_out` and `total_out` receive
// the pooled estimate and total variance.
//
// # Safety
// Arrays must have the stated lengths.
TpStatus tp_rubin_combine(const double *estimates,
                          const double *variances,
                          size_t m,
                          size_t p,
                          double *theta_out,
                          double *total_out);

// Pseudo-true `(α*, β*)` of the working model at `(β₀, δ₀)`.
//
// # Safety
// `alpha` and `beta` must be writable.
TpStatus tp_pseudo_true(TpScenario scenario,
                        double beta0,
                        double delta0,
                        double *alpha,
                        double *beta);

// Gaussian-kernel Nadaraya–Watson fit at the data points.
//
// # Safety
// `x`, `y` and `fitted` must hold `n` values.
TpStatus tp_kernel_regression(const double *x,
                              const double *y,
                              size_t n,
                              double bandwidth,
                              double *fitted);

// Leave-one-out cross-validated bandwidth on the default grid.
//
// # Safety
// `x` and `y` must hold `n` values; `bandwidth` must be writable.
TpStatus tp_loo_bandwidth(const double *x, const double *y, size_t n, double *bandwidth);

// Parses a TOML experiment configuration.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
TpStatus tp_experiment_from_toml(const char *toml, TpExperiment **out);

// Runs an experiment to completion.
//
// # Safety
// `experiment` must be a live handle; `out` must be writable.
TpStatus tp_experiment_run(const TpExperiment *experiment, TpReport **out);

// Releases an experiment.
//
// # Safety
// `experiment` must be null or a handle not yet freed.
void tp_experiment_free(TpExperiment *experiment);

// Looks up one report value by grid point, estimator label and metric.
//
// # Safety
// `report` must be a live handle, the strings NUL-terminated and `value` writable.
TpStatus tp_report_value(const TpReport *report,
                         double beta0,
                         double delta0,
                         const char *estimator,
                         const char *metric,
                         double *value);

// Renders the report as CSV. The string must be released with [`tp_string_free`].
//
// # Safety
// `report` must be a live handle and `out` writable.
TpStatus tp_report_to_csv(const TpReport *report, char **out);

// Releases a report.
//
// # Safety
// `report` must be null or a handle not yet freed.
void tp_report_free(TpReport *report);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void tp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOPHASE_H */
