#ifndef NVSPIN_H
#define NVSPIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define NV_ISOTOPE_N14 14

#define NV_ISOTOPE_N15 15

typedef enum NvStatus {
  NV_STATUS_OK = 0,
  NV_STATUS_NULL_POINTER = 1,
  NV_STATUS_INVALID_INPUT = 2,
  NV_STATUS_AMBIGUOUS_LABELING = 3,
  NV_STATUS_FIT_NO_CONVERGENCE = 4,
  NV_STATUS_VALIDITY_MARGIN = 5,
  NV_STATUS_NUMERICAL = 6,
  NV_STATUS_PANIC = 7,
} NvStatus;

typedef struct NvFitResult NvFitResult;

/**
 * Coupling parameters bound to an isotope.
 */
typedef struct NvParams NvParams;

typedef struct NvTransitionSet NvTransitionSet;

/**
 * Plain copy of the coupling parameters, kHz and kHz/G.
 */
typedef struct NvCouplingParams {
  double d;
  double q;
  double a_par;
  double a_perp;
  double gamma_e;
  double gamma_n;
} NvCouplingParams;

typedef struct NvRamseyResult {
  /**
   * kHz, nonnegative
   */
  double delta;
  /**
   * s
   */
  double t2_star;
  double amplitude;
  double phase;
  double offset;
  double rms_residual;
} NvRamseyResult;

/**
 * Message for the most recent failure on this thread; empty after success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *nv_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nv_version(void);

/**
 * Reference parameters at 297 K.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum NvStatus nv_params_preset(uint32_t isotope, struct NvParams **out);

/**
 * Reference temperature models evaluated at `temperature` (K).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum NvStatus nv_params_at_temperature(uint32_t isotope, double temperature, struct NvParams **out);

/**
 * Validated parameters from explicit values.
 *
 * # Safety
 * `values` must point to one readable `NvCouplingParams`; `out` as for `nv_params_preset`.
 */
enum NvStatus nv_params_new(uint32_t isotope,
                            const struct NvCouplingParams *values,
                            struct NvParams **out);

/**
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum NvStatus nv_params_get(const struct NvParams *params, struct NvCouplingParams *out);

/**
 * # Safety
 * `params` must be null or a handle from this library not yet freed.
 */
void nv_params_free(struct NvParams *params);

/**
 * Labeled transitions by exact diagonalization at field (bz, bx) in G.
 * `transverse_nuclear_zeeman` = 0 drops the −γn·Bx·Ix term.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum NvStatus nv_transitions_compute(const struct NvParams *params,
                                     double bz,
                                     double bx,
                                     int32_t transverse_nuclear_zeeman,
                                     struct NvTransitionSet **out);

/**
 * Number of transitions in the set; 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t nv_transitions_len(const struct NvTransitionSet *set);

/**
 * Name and frequency (kHz) of entry `index`, in label order. The name
 * pointer lives as long as the set.
 *
 * # Safety
 * `set` must be a live handle; `name` and `freq` writable or null.
 */
enum NvStatus nv_transitions_get(const struct NvTransitionSet *set,
                                 size_t index,
                                 const char **name,
                                 double *freq);

/**
 * Frequency (kHz) of a transition by name, e.g. "f1", "fdq", "fplus_+1".
 *
 * # Safety
 * `set` must be a live handle, `label` a NUL-terminated string, `freq` writable.
 */
enum NvStatus nv_transitions_frequency(const struct NvTransitionSet *set,
                                       const char *label,
                                       double *freq);

/**
 * # Safety
 * `set` must be null or a handle from this library not yet freed.
 */
void nv_transitions_free(struct NvTransitionSet *set);

/**
 * Eigen-decomposition of a symmetric n×n row-major matrix.
 * Eigenvalues ascend; column i of the row-major `eigenvectors` output pairs
 * with eigenvalue i. `eigenvectors` may be null.
 *
 * # Safety
 * `matrix` must hold n·n doubles, `eigenvalues` n, `eigenvectors` n·n if non-null.
 */
enum NvStatus nv_eigh(size_t n, const double *matrix, double *eigenvalues, double *eigenvectors);

/**
 * Quadratic misalignment coefficient for fDQ (14N) or f7 (15N) at axial
 * field `bz`, and the baseline frequency (kHz) it scales.
 *
 * # Safety
 * `params` must be a live handle; `beta` writable; `baseline` writable or null.
 */
enum NvStatus nv_beta_coefficient(const struct NvParams *params,
                                  double bz,
                                  double *beta,
                                  double *baseline);

/**
 * Fits one temperature's lines. `labels[i]`, `freqs[i]` and `sigmas[i]`
 * (kHz) describe line i; `guess` and `bz` seed the search, `bx` is held fixed.
 *
 * # Safety
 * Arrays must hold `n` entries; `labels` entries NUL-terminated; `out` writable.
 */
enum NvStatus nv_fit_measurements(const struct NvParams *guess,
                                  double bz,
                                  double bx,
                                  double temperature,
                                  const char *const *labels,
                                  const double *freqs,
                                  const double *sigmas,
                                  size_t n,
                                  struct NvFitResult **out);

/**
 * Number of fitted quantities (7 for 14N, 6 for 15N).
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t nv_fit_param_count(const struct NvFitResult *fit);

/**
 * Copies fitted values in the order D, γe·Bz, [Q,] A∥, A⊥, γe·Bx, γe/γn.
 *
 * # Safety
 * `fit` must be a live handle and `values` hold `len` doubles.
 */
enum NvStatus nv_fit_params(const struct NvFitResult *fit, double *values, size_t len);

/**
 * Fitted coupling parameters with γe fixed and γn from the fitted ratio.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum NvStatus nv_fit_coupling(const struct NvFitResult *fit, struct NvCouplingParams *out);

/**
 * Weighted sum of squared residuals at the optimum.
 *
 * # Safety
 * `fit` must be a live handle and `objective` writable.
 */
enum NvStatus nv_fit_objective(const struct NvFitResult *fit, double *objective);

/**
 * # Safety
 * `fit` must be null or a handle from this library not yet freed.
 */
void nv_fit_free(struct NvFitResult *fit);

/**
 * Fits an exponentially damped cosine to a Ramsey trace (times in s).
 *
 * # Safety
 * `times` and `signal` must hold `n` doubles; `out` writable.
 */
enum NvStatus nv_ramsey_fit(const double *times,
                            const double *signal,
                            size_t n,
                            struct NvRamseyResult *out);

#endif  /* NVSPIN_H */
