#ifndef VAOI_H
#define VAOI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VaoiStatus {
  VAOI_STATUS_OK = 0,
  VAOI_STATUS_NULL_POINTER = 1,
  VAOI_STATUS_INVALID_PARAMETER = 2,
  VAOI_STATUS_STATE_OUT_OF_RANGE = 3,
  VAOI_STATUS_INFEASIBLE_ACTION = 4,
  VAOI_STATUS_NOT_CONVERGED = 5,
  VAOI_STATUS_POLICY_SHAPE = 6,
  VAOI_STATUS_SINGULAR_CHAIN = 7,
  VAOI_STATUS_BUFFER_TOO_SMALL = 8,
  VAOI_STATUS_INTERNAL = 9,
} VaoiStatus;

typedef enum VaoiAction {
  VAOI_ACTION_IDLE = 0,
  VAOI_ACTION_TRANSMIT = 1,
} VaoiAction;

/**
 * Validated system parameters.
 */
typedef struct VaoiParams VaoiParams;

/**
 * Deterministic stationary policy over the (delta, b) grid.
 */
typedef struct VaoiPolicy VaoiPolicy;

/**
 * Result of relative value iteration.
 */
typedef struct VaoiSolution VaoiSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated name of a status code.
 */
const char *vaoi_status_string(enum VaoiStatus status);

/**
 * Message for the last failed call on this thread, empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *vaoi_last_error_message(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum VaoiStatus vaoi_params_new(double p_g,
                                double p_s,
                                double beta,
                                uint32_t battery_capacity,
                                uint32_t delta_max,
                                struct VaoiParams **out);

/**
 * # Safety
 * `params` must be null or a handle from `vaoi_params_new` not yet freed.
 */
void vaoi_params_free(struct VaoiParams *params);

/**
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum VaoiStatus vaoi_params_num_states(const struct VaoiParams *params, size_t *out);

/**
 * Runs relative value iteration. `tol <= 0` or `max_iter == 0` select the
 * library defaults.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum VaoiStatus vaoi_solve(const struct VaoiParams *params,
                           double tol,
                           size_t max_iter,
                           struct VaoiSolution **out);

/**
 * # Safety
 * `solution` must be null or a handle from `vaoi_solve` not yet freed.
 */
void vaoi_solution_free(struct VaoiSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle; each non-null output must be writable.
 */
enum VaoiStatus vaoi_solution_summary(const struct VaoiSolution *solution,
                                      double *avg_cost,
                                      size_t *iterations,
                                      double *span_residual);

/**
 * Copies the relative value function (delta-major order) into `buf`.
 * With `buf == NULL` only the required length is reported in `len_out`.
 *
 * # Safety
 * `solution` must be a live handle, `buf` null or valid for `len` doubles,
 * and `len_out` writable.
 */
enum VaoiStatus vaoi_solution_values(const struct VaoiSolution *solution,
                                     double *buf,
                                     size_t len,
                                     size_t *len_out);

/**
 * Extracts an independent copy of the optimal policy.
 *
 * # Safety
 * `solution` must be a live handle and `out` writable.
 */
enum VaoiStatus vaoi_solution_policy(const struct VaoiSolution *solution, struct VaoiPolicy **out);

/**
 * Transmit whenever the battery is non-empty.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum VaoiStatus vaoi_policy_greedy(const struct VaoiParams *params, struct VaoiPolicy **out);

/**
 * Builds a policy from `len` action bits (0 idle, 1 transmit) in
 * delta-major order.
 *
 * # Safety
 * `params` must be a live handle, `actions` valid for `len` bytes, and
 * `out` writable.
 */
enum VaoiStatus vaoi_policy_from_actions(const struct VaoiParams *params,
                                         const uint8_t *actions,
                                         size_t len,
                                         struct VaoiPolicy **out);

/**
 * # Safety
 * `policy` must be null or a live policy handle.
 */
void vaoi_policy_free(struct VaoiPolicy *policy);

/**
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
enum VaoiStatus vaoi_policy_action(const struct VaoiPolicy *policy,
                                   uint32_t delta,
                                   uint32_t battery,
                                   enum VaoiAction *out);

/**
 * Exact long-run average VAoI of `policy` from state (0, 0).
 *
 * # Safety
 * `params` and `policy` must be live handles and `out` writable.
 */
enum VaoiStatus vaoi_evaluate_exact(const struct VaoiParams *params,
                                    const struct VaoiPolicy *policy,
                                    double *out);

/**
 * Monte Carlo estimate of the average VAoI with the library's default
 * burn-in. `ci99` receives the two interval endpoints when non-null.
 *
 * # Safety
 * `params` and `policy` must be live handles, `mean` and `std_error`
 * writable, and `ci99` null or valid for two doubles.
 */
enum VaoiStatus vaoi_evaluate_monte_carlo(const struct VaoiParams *params,
                                          const struct VaoiPolicy *policy,
                                          size_t runs,
                                          uint64_t horizon,
                                          uint64_t seed,
                                          double *mean,
                                          double *std_error,
                                          double *ci99);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VAOI_H */
