#ifndef ACD_H
#define ACD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AcdStatus {
  ACD_STATUS_OK = 0,
  /*
   Bad parameter values or data.
   */
  ACD_STATUS_INVALID_ARGUMENT = 1,
  ACD_STATUS_NULL_POINTER = 2,
  /*
   The optimizer stopped before converging; the fit handle is still set.
   */
  ACD_STATUS_NOT_CONVERGED = 3,
  /*
   A numerical failure not caused by the input.
   */
  ACD_STATUS_COMPUTATION_FAILED = 4,
  /*
   Caller buffer too small.
   */
  ACD_STATUS_BUFFER_TOO_SMALL = 5,
  /*
   Internal panic caught at the boundary.
   */
  ACD_STATUS_PANIC = 6,
} AcdStatus;

/*
 Opaque estimation result.
 */
typedef struct AcdFit AcdFit;

/*
 Opaque duration series.
 */
typedef struct AcdSeries AcdSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next call into this library from the same thread.
 */
const char *acd_last_error(void);

/*
 Simulates exponential-innovation durations on `[0, span]`.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum AcdStatus acd_simulate(double omega,
                            double alpha,
                            double span,
                            uint64_t seed,
                            struct AcdSeries **out);

/*
 Copies `n` durations into a new series. A positive `span` marks it as
 observed on `[0, span]`; pass 0 for a fixed-count series.

 # Safety
 `durations` must point to `n` readable doubles and `out` to writable
 storage for one handle.
 */
enum AcdStatus acd_series_from_durations(const double *durations,
                                         size_t n,
                                         double span,
                                         struct AcdSeries **out);

/*
 Number of durations, 0 for a null handle.

 # Safety
 `series` must be null or a live handle.
 */
size_t acd_series_len(const struct AcdSeries *series);

/*
 Copies the durations into `buf`, which must hold `acd_series_len` values.

 # Safety
 `series` must be a live handle and `buf` must point to `capacity`
 writable doubles.
 */
enum AcdStatus acd_series_copy_durations(const struct AcdSeries *series,
                                         double *buf,
                                         size_t capacity);

/*
 # Safety
 `series` must be null or a handle not yet freed.
 */
void acd_series_free(struct AcdSeries *series);

/*
 Quasi-maximum-likelihood fit. A non-zero `include_remainder` adds the
 censored last-duration term, which needs a series with a span. On
 [`AcdStatus::NotConverged`] the handle is still written so the caller can
 inspect it.

 # Safety
 `series` must be a live handle and `out` writable storage for one handle.
 */
enum AcdStatus acd_fit(const struct AcdSeries *series,
                       int32_t include_remainder,
                       struct AcdFit **out);

/*
 # Safety
 `fit` must be a live handle; `omega` and `alpha` writable.
 */
enum AcdStatus acd_fit_theta(const struct AcdFit *fit, double *omega, double *alpha);

/*
 Standard errors from the inverse observed information.

 # Safety
 `fit` must be a live handle; `se_omega` and `se_alpha` writable.
 */
enum AcdStatus acd_fit_std_errors(const struct AcdFit *fit, double *se_omega, double *se_alpha);

/*
 `(alpha_hat - null_alpha) / se(alpha_hat)`.

 # Safety
 `fit` must be a live handle and `t` writable.
 */
enum AcdStatus acd_fit_t_ratio(const struct AcdFit *fit, double null_alpha, double *t);

/*
 1 if the fit converged, 0 otherwise (including a null handle).

 # Safety
 `fit` must be null or a live handle.
 */
int32_t acd_fit_converged(const struct AcdFit *fit);

/*
 # Safety
 `fit` must be null or a handle not yet freed.
 */
void acd_fit_free(struct AcdFit *fit);

/*
 Tail index of the stationary durations for exponential innovations.

 # Safety
 `kappa` must be writable.
 */
enum AcdStatus acd_tail_index(double alpha, double *kappa);

/*
 # Safety
 `alpha` must be writable.
 */
enum AcdStatus acd_alpha_for_kappa(double kappa, double *alpha);

/*
 Hill estimate from the `k` largest of `n` positive values.

 # Safety
 `data` must point to `n` readable doubles and `kappa_hat` be writable.
 */
enum AcdStatus acd_hill(const double *data, size_t n, size_t k, double *kappa_hat);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACD_H */
