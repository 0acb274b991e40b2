#ifndef IMEXOPT_H
#define IMEXOPT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Linearization scheme selector.
 */
typedef enum {
  ImexoptScheme_Fe = 0,
  ImexoptScheme_ImexEuler = 1,
} ImexoptScheme;

/**
 * Status codes returned by fallible calls.
 */
typedef enum {
  ImexoptStatus_Ok = 0,
  ImexoptStatus_NullPointer = -1,
  ImexoptStatus_InvalidArgument = -2,
  ImexoptStatus_Divergence = -3,
  ImexoptStatus_CallbackFailed = -4,
  ImexoptStatus_ParseError = -5,
  ImexoptStatus_InvalidTableau = -6,
  ImexoptStatus_Panic = -7,
} ImexoptStatus;

/**
 * Opaque optimizer-run handle: a method plus the evolving discrete state.
 */
typedef struct ImexoptRun ImexoptRun;

/**
 * Opaque GARK tableau handle.
 */
typedef struct ImexoptTableau ImexoptTableau;

typedef struct Option_ImexoptGradFn Option_ImexoptGradFn;

/**
 * Continuous-time rate coefficients of the optimizer ODE.
 */
typedef struct {
  double d;
  double r;
  double p;
  double q;
  double epsilon;
} ImexoptRates;

/**
 * Parameters of the linearized one-step map.
 */
typedef struct {
  double h;
  double d;
  double r;
  double p;
  double q;
  double lambda;
  double epsilon;
} ImexoptStabilityParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Most recent error message on this thread; valid until the next failing
 * call. Never null.
 */
const char *imexopt_last_error(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library (or null).
 */
void imexopt_string_free(char *s);

/**
 * Exponential map: d = r = -ln(beta1)/h, p = q = -ln(beta2)/h.
 */
ImexoptStatus imexopt_rates_from_betas(double h,
                                       double beta1,
                                       double beta2,
                                       double epsilon,
                                       ImexoptRates *out);

/**
 * Inverse exponential map: beta_i = exp(-h rate).
 */
ImexoptStatus imexopt_betas_from_rates(double h,
                                       ImexoptRates rates,
                                       double *out_beta1,
                                       double *out_beta2);

/**
 * First-order map beta_i = 1 - h rate (the identification under which IMEX
 * Euler reproduces discrete Adam exactly).
 */
ImexoptStatus imexopt_first_order_betas(double h,
                                        ImexoptRates rates,
                                        double *out_beta1,
                                        double *out_beta2);

/**
 * Builds a builtin tableau by name (`imex-euler`, `imex-trapezoidal`,
 * `ssprk3-lobattoiiic(l22,l32)`, `rk4-lobattoiiic(alpha)`). Null on error.
 *
 * # Safety
 * `name` must be a valid NUL-terminated string.
 */
ImexoptTableau *imexopt_tableau_builtin(const char *name);

/**
 * Parses the plain-text tableau format; the tableau is validated before
 * return. Null on error (see `imexopt_last_error`).
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
ImexoptTableau *imexopt_tableau_parse(const char *text);

/**
 * Renders a tableau in the file format. Caller frees with
 * `imexopt_string_free`.
 *
 * # Safety
 * `tableau` must be a live handle from this library.
 */
char *imexopt_tableau_format(const ImexoptTableau *tableau);

/**
 * Number of structural violations (0 means valid, negative means a null
 * handle). The first violation text lands in `imexopt_last_error`.
 *
 * # Safety
 * `tableau` must be a live handle from this library.
 */
int32_t imexopt_tableau_violations(const ImexoptTableau *tableau);

/**
 * Order-condition check: writes 0/1 flags for orders 1 and 2.
 *
 * # Safety
 * `tableau` must be a live handle; out pointers must be writable.
 */
ImexoptStatus imexopt_tableau_order(const ImexoptTableau *tableau,
                                    int32_t *out_order1,
                                    int32_t *out_order2);

/**
 * Stage counts of the two partitions.
 *
 * # Safety
 * `tableau` must be a live handle; out pointers must be writable.
 */
ImexoptStatus imexopt_tableau_stages(const ImexoptTableau *tableau,
                                     uintptr_t *out_explicit,
                                     uintptr_t *out_implicit);

/**
 * Releases a tableau handle.
 *
 * # Safety
 * `tableau` must be a handle from this library (or null); not used after.
 */
void imexopt_tableau_free(ImexoptTableau *tableau);

/**
 * Spectral radius of the scheme's linearized update; negative on error.
 */
double imexopt_spectral_radius(ImexoptScheme scheme, ImexoptStabilityParams params);

/**
 * Closed-form eigenvalues of the scheme's stability matrix, sorted by real
 * part descending. `out_re` and `out_im` receive three values each.
 *
 * # Safety
 * `out_re` and `out_im` must point to at least three writable f64 each.
 */
ImexoptStatus imexopt_eigenvalues(ImexoptScheme scheme,
                                  ImexoptStabilityParams params,
                                  double *out_re,
                                  double *out_im);

/**
 * Creates an optimizer run for a named method (`sgd`, `fe`, `adam`,
 * `imex-euler`, `imex-trapezoidal`, `heun`, `ssprk3`, `rk4`). Null on error.
 *
 * # Safety
 * `method` must be a valid string, `theta0` an array of length `n`, and
 * `grad_fn` a callback that stays valid for the life of the run.
 */
ImexoptRun *imexopt_run_new(const char *method,
                            const double *theta0,
                            uintptr_t n,
                            double h,
                            double beta1,
                            double beta2,
                            double epsilon,
                            Option_ImexoptGradFn grad_fn,
                            void *user);

/**
 * Creates an optimizer run driven by a custom GARK tableau (copied out of
 * the handle). Null on error.
 *
 * # Safety
 * Same contract as `imexopt_run_new`, plus `tableau` must be a live handle.
 */
ImexoptRun *imexopt_run_new_gark(const ImexoptTableau *tableau,
                                 const double *theta0,
                                 uintptr_t n,
                                 double h,
                                 double beta1,
                                 double beta2,
                                 double epsilon,
                                 Option_ImexoptGradFn grad_fn,
                                 void *user);

/**
 * Advances the run by one optimizer step.
 *
 * # Safety
 * `run` must be a live handle from this library.
 */
ImexoptStatus imexopt_run_step(ImexoptRun *run);

/**
 * Copies the current parameters into `out` (length `n` from construction).
 *
 * # Safety
 * `run` must be live; `out` must hold at least `n` writable f64.
 */
ImexoptStatus imexopt_run_theta(const ImexoptRun *run, double *out);

/**
 * Step count, continuous time, and cumulative gradient evaluations.
 *
 * # Safety
 * `run` must be live; out pointers (where non-null) must be writable.
 */
ImexoptStatus imexopt_run_stats(const ImexoptRun *run,
                                uint64_t *out_step,
                                double *out_t,
                                uint64_t *out_grad_evals);

/**
 * Releases a run handle.
 *
 * # Safety
 * `run` must be a handle from this library (or null); not used after.
 */
void imexopt_run_free(ImexoptRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMEXOPT_H */
