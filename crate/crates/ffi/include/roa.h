#ifndef ROA_H
#define ROA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RoaStatus {
  ROA_STATUS_OK = 0,
  ROA_STATUS_INVALID_ARGUMENT = 1,
  ROA_STATUS_DIMENSION_MISMATCH = 2,
  ROA_STATUS_DIVERGED = 3,
  ROA_STATUS_CERTIFICATE = 4,
  ROA_STATUS_HYPOTHESIS_VIOLATED = 5,
  ROA_STATUS_DOMAIN_MISMATCH = 6,
  ROA_STATUS_SOLVER_STALL = 7,
  ROA_STATUS_SOLVER = 8,
  ROA_STATUS_EMPTY_POOL = 9,
  ROA_STATUS_JSON = 10,
  ROA_STATUS_IO = 11,
  ROA_STATUS_NULL_POINTER = 12,
  ROA_STATUS_PANIC = 13,
} RoaStatus;

typedef enum RoaShapeMode {
  ROA_SHAPE_MODE_DD_LP = 0,
  ROA_SHAPE_MODE_FULL_PSD = 1,
} RoaShapeMode;

typedef struct RoaCertificate RoaCertificate;

typedef struct RoaEstimate RoaEstimate;

typedef struct RoaSystem RoaSystem;

/**
 * Scalar fields of a certificate.
 */
typedef struct RoaCertSummary {
  uintptr_t p_tilde;
  double r_iota;
  double iota;
  uintptr_t p;
  double c_p;
} RoaCertSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Release with
 * `roa_string_free`.
 */
char *roa_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void roa_string_free(char *s);

/**
 * Saturated LQR benchmark.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RoaStatus roa_system_lqr(struct RoaSystem **out);

/**
 * Suboptimal MPC benchmark; `alpha <= 0` selects the default step size.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RoaStatus roa_system_mpc(double alpha, uintptr_t r_iters, struct RoaSystem **out);

/**
 * System from its JSON definition.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RoaStatus roa_system_from_json(const char *json, struct RoaSystem **out);

/**
 * State dimension, or 0 for NULL.
 *
 * # Safety
 * `sys` must be a live handle or NULL.
 */
uintptr_t roa_system_dim(const struct RoaSystem *sys);

/**
 * # Safety
 * `sys` must come from this library or be NULL.
 */
void roa_system_free(struct RoaSystem *sys);

/**
 * Certificate at horizon `p`; `iota <= 0` selects the default.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum RoaStatus roa_certificate_compute(const struct RoaSystem *sys,
                                       uintptr_t p,
                                       double iota,
                                       struct RoaCertificate **out);

/**
 * Certificate from a user-supplied invariance window and radius.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum RoaStatus roa_certificate_from_radius(const struct RoaSystem *sys,
                                           uintptr_t p_tilde,
                                           double r_iota,
                                           double iota,
                                           uintptr_t p,
                                           struct RoaCertificate **out);

/**
 * # Safety
 * `cert` must be a live handle and `out` a valid pointer.
 */
enum RoaStatus roa_certificate_summary(const struct RoaCertificate *cert,
                                       struct RoaCertSummary *out);

/**
 * Decide whether `x` lies in the certified sublevel set. `v_p` receives
 * the truncated energy for inside points and NaN otherwise; it may be NULL.
 *
 * # Safety
 * Handles must be live, `x` must hold `len` values, `inside` must be valid.
 */
enum RoaStatus roa_certificate_membership(const struct RoaSystem *sys,
                                          const struct RoaCertificate *cert,
                                          const double *x,
                                          uintptr_t len,
                                          bool *inside,
                                          double *v_p);

/**
 * Certificate as JSON; release with `roa_string_free`.
 *
 * # Safety
 * `cert` must be a live handle and `out` a valid pointer.
 */
enum RoaStatus roa_certificate_to_json(const struct RoaCertificate *cert, char **out);

/**
 * # Safety
 * `cert` must come from this library or be NULL.
 */
void roa_certificate_free(struct RoaCertificate *cert);

/**
 * Draw pools in the box `[lower, upper]` (length `dim`) and fit an
 * estimate of degree `2q`.
 *
 * # Safety
 * Handles must be live, `lower`/`upper` must hold `dim` values, `out` must
 * be valid.
 */
enum RoaStatus roa_estimate_run(const struct RoaSystem *sys,
                                const struct RoaCertificate *cert,
                                const double *lower,
                                const double *upper,
                                uintptr_t dim,
                                uintptr_t n1,
                                uintptr_t n2,
                                uintptr_t q,
                                uint64_t seed,
                                enum RoaShapeMode mode,
                                struct RoaEstimate **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RoaStatus roa_estimate_from_json(const char *json, struct RoaEstimate **out);

/**
 * # Safety
 * `est` must be a live handle and `out` a valid pointer.
 */
enum RoaStatus roa_estimate_to_json(const struct RoaEstimate *est, char **out);

/**
 * Polynomial value at `x`.
 *
 * # Safety
 * `est` must be live, `x` must hold `len` values, `out` must be valid.
 */
enum RoaStatus roa_estimate_eval(const struct RoaEstimate *est,
                                 const double *x,
                                 uintptr_t len,
                                 double *out);

/**
 * Whether `x` lies strictly below the estimate's level.
 *
 * # Safety
 * `est` must be live, `x` must hold `len` values, `out` must be valid.
 */
enum RoaStatus roa_estimate_contains(const struct RoaEstimate *est,
                                     const double *x,
                                     uintptr_t len,
                                     bool *out);

/**
 * Fit residual `eta_N` and level `c_N`; either pointer may be NULL.
 *
 * # Safety
 * `est` must be a live handle.
 */
enum RoaStatus roa_estimate_levels(const struct RoaEstimate *est, double *eta_n, double *c_n);

/**
 * # Safety
 * `est` must come from this library or be NULL.
 */
void roa_estimate_free(struct RoaEstimate *est);

/**
 * Accuracy reached by `n` samples at confidence `1 - delta` with
 * `n_theta` decision variables.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RoaStatus roa_complexity_epsilon(uint64_t n, double delta, uintptr_t n_theta, double *out);

/**
 * Smallest sample count reaching accuracy `epsilon`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RoaStatus roa_complexity_required(double epsilon,
                                       double delta,
                                       uintptr_t n_theta,
                                       uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROA_H */
