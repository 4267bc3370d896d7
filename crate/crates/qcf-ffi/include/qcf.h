#ifndef QCF_H
#define QCF_H

/* Generated by cbindgen from qcf-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirrored into the generated header.
 */
typedef enum {
  QCF_STATUS_OK = 0,
  QCF_STATUS_INVALID_ARGUMENT = 1,
  QCF_STATUS_PARSE_ERROR = 2,
  QCF_STATUS_ESTIMATION_DEGENERATE = 3,
  QCF_STATUS_SINGULAR_MATRIX = 4,
  QCF_STATUS_IO_ERROR = 5,
  QCF_STATUS_NULL_POINTER = 6,
  QCF_STATUS_PANIC = 7,
} QcfStatus;

/**
 * Opaque fitted-model handle.
 */
typedef struct QcfModel QcfModel;

/**
 * Opaque panel handle.
 */
typedef struct QcfPanel QcfPanel;

/**
 * Metric bundle in plain C layout.
 */
typedef struct {
  double qhe;
  double aqe;
  double r1_total;
  double r1_time_series;
  double r1_cross_section;
} QcfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to
 * `len`); returns the full message length.
 *
 * # Safety
 * `buf` must be writable for `len` bytes (or NULL to query the length).
 */
size_t qcf_last_error_message(char *buf, size_t len);

/**
 * Load a long-format CSV panel (header `time,id,y,x1..xd`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
QcfStatus qcf_panel_load_csv(const char *path, bool standardize, QcfPanel **out);

/**
 * Build a panel from parallel arrays: `times[i]`, `units[i]` index the
 * observation's period and unit, `y[i]` is the outcome and
 * `x[i*d .. (i+1)*d]` its characteristics.
 *
 * # Safety
 * All arrays must hold at least `n_obs` (respectively `n_obs * d`)
 * readable elements.
 */
QcfStatus qcf_panel_from_arrays(const int64_t *times,
                                const int64_t *units,
                                const double *y,
                                const double *x,
                                size_t n_obs,
                                size_t d,
                                QcfPanel **out);

/**
 * # Safety
 * `panel` must be a handle produced by this library, freed at most once.
 */
void qcf_panel_free(QcfPanel *panel);

/**
 * Panel dimensions: units, periods, characteristics, total rows.
 *
 * # Safety
 * `panel` must be a live handle; out-pointers may be NULL to skip a field.
 */
QcfStatus qcf_panel_dims(const QcfPanel *panel,
                         size_t *n_units,
                         size_t *n_periods,
                         size_t *d,
                         size_t *n_total);

/**
 * Fit the three-step estimator.
 *
 * # Safety
 * `panel` must be a live handle and `out` a valid pointer.
 */
QcfStatus qcf_fit(const QcfPanel *panel,
                  double tau,
                  size_t r,
                  size_t m,
                  double ridge,
                  QcfModel **out);

/**
 * # Safety
 * `model` must be a handle produced by this library, freed at most once.
 */
void qcf_model_free(QcfModel *model);

/**
 * Model dimensions: periods, factor count, truncation order, covariate
 * dimension and sieve size.
 *
 * # Safety
 * `model` must be a live handle; out-pointers may be NULL.
 */
QcfStatus qcf_model_dims(const QcfModel *model,
                         size_t *t,
                         size_t *r,
                         size_t *m,
                         size_t *d,
                         size_t *basis_len);

/**
 * Copy the `T × r` factor matrix (row-major).
 *
 * # Safety
 * `model` must be live; `buf` must hold `len >= T*r` writable doubles.
 */
QcfStatus qcf_model_factors(const QcfModel *model, double *buf, size_t len);

/**
 * Copy the `d × r` index-parameter matrix (row-major).
 *
 * # Safety
 * As [`qcf_model_factors`], with `len >= d*r`.
 */
QcfStatus qcf_model_theta(const QcfModel *model, double *buf, size_t len);

/**
 * Copy the `m × r` sieve-coefficient matrix (row-major).
 *
 * # Safety
 * As [`qcf_model_factors`], with `len >= m*r`.
 */
QcfStatus qcf_model_loading_coefficients(const QcfModel *model, double *buf, size_t len);

/**
 * Evaluate the loading function `λ̂_k(x'θ̂_k)` (zero-based `k`).
 *
 * # Safety
 * `x` must hold `d` readable doubles; `out` must be writable.
 */
QcfStatus qcf_model_eval_loading(const QcfModel *model,
                                 size_t k,
                                 const double *x,
                                 size_t d,
                                 double *out);

/**
 * In-sample metric bundle of the fit on its own panel.
 *
 * # Safety
 * `model` must be live and `out` writable.
 */
QcfStatus qcf_model_metrics(const QcfModel *model, QcfMetrics *out);

/**
 * Plug-in 95% confidence half-widths and estimates for factor `k`'s index
 * parameter. Writes `d` estimates and `d` standard errors.
 *
 * # Safety
 * `model` must be live; both buffers must hold `d` writable doubles.
 */
QcfStatus qcf_model_theta_inference(const QcfModel *model,
                                    size_t k,
                                    double bandwidth_const,
                                    double *estimates,
                                    double *standard_errors);

/**
 * Wald test of `H0: θ_{k(component)} = 0` (zero-based component). Writes
 * the statistic and p-value.
 *
 * # Safety
 * `model` must be live; out-pointers must be writable.
 */
QcfStatus qcf_model_wald_component(const QcfModel *model,
                                   size_t k,
                                   size_t component,
                                   double bandwidth_const,
                                   double *statistic,
                                   double *p_value);

/**
 * Persist a fitted model (matrices + JSON manifest) under `dir`.
 *
 * # Safety
 * `model` must be live; `dir` must be a NUL-terminated path.
 */
QcfStatus qcf_model_save(const QcfModel *model, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCF_H */
