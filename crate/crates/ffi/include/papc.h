#ifndef PAPC_H
#define PAPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PapcStatus {
  PAPC_STATUS_OK = 0,
  PAPC_STATUS_NULL_POINTER = 1,
  PAPC_STATUS_INVALID_ARGUMENT = 2,
  PAPC_STATUS_DIMENSION_MISMATCH = 3,
  PAPC_STATUS_NOT_POSITIVE_DEFINITE = 4,
  PAPC_STATUS_UNKNOWN_NAME = 5,
  PAPC_STATUS_STEP_SIZE_REJECTED = 6,
  PAPC_STATUS_DIVERGED = 7,
  PAPC_STATUS_NUMERICAL_FAILURE = 8,
  PAPC_STATUS_PANIC = 9,
} PapcStatus;

/**
 * Outcome of a step-size check.
 */
typedef enum PapcTauVerdict {
  PAPC_TAU_VERDICT_ACCEPTED = 0,
  PAPC_TAU_VERDICT_REJECTED = 1,
  PAPC_TAU_VERDICT_INDETERMINATE = 2,
} PapcTauVerdict;

/**
 * A zoo problem with its reference solution.
 */
typedef struct PapcProblem PapcProblem;

/**
 * A proximable function.
 */
typedef struct PapcProx PapcProx;

/**
 * Iterator state of a run on a zoo problem.
 */
typedef struct PapcSolver PapcSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t papc_last_error(char *buf, size_t len);

/**
 * Builds a function from a tag such as `l1(weight=0.5)` or `box(lo=-1,hi=1)`.
 *
 * # Safety
 * `tag` must be a NUL-terminated string; `out` must be writable.
 */
enum PapcStatus papc_prox_new(const char *tag, size_t dim, struct PapcProx **out);

/**
 * # Safety
 * `p` must be null or a handle from [`papc_prox_new`] not yet freed.
 */
void papc_prox_free(struct PapcProx *p);

/**
 * `out = prox_{λ f}(x)`.
 *
 * # Safety
 * `x` and `out` must each point to `len` doubles.
 */
enum PapcStatus papc_prox_apply(const struct PapcProx *p,
                                double lambda,
                                const double *x,
                                double *out,
                                size_t len);

/**
 * `f(x)`; `+inf` outside the domain.
 *
 * # Safety
 * `x` must point to `len` doubles and `value` must be writable.
 */
enum PapcStatus papc_prox_value(const struct PapcProx *p,
                                const double *x,
                                size_t len,
                                double *value);

/**
 * Spectral norm of a `rows × cols` matrix by power iteration on `A'A`.
 * `converged` is set to 1 when the residual test was met.
 *
 * # Safety
 * `a` must point to `rows * cols` doubles; `norm` and `converged` must be writable.
 */
enum PapcStatus papc_spectral_norm(const double *a,
                                   size_t rows,
                                   size_t cols,
                                   double tol,
                                   size_t max_iter,
                                   uint64_t seed,
                                   double *norm,
                                   int *converged);

/**
 * Checks `τ ‖U^{1/2} L‖² < 1 - margin` for dense `U` (`k × k`, symmetric
 * positive definite) and `L` (`k × n`), with `V` the whole space.
 *
 * # Safety
 * `u` and `l` must point to `k * k` and `k * n` doubles; outputs must be writable.
 */
enum PapcStatus papc_validate_tau(const double *u,
                                  const double *l,
                                  size_t k,
                                  size_t n,
                                  double tau,
                                  double margin,
                                  enum PapcTauVerdict *verdict,
                                  double *lambda_max);

/**
 * Builds a zoo problem (`cls`, `lasso`, `fused`, `multi`); `dim = 0` picks
 * the default dimension.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum PapcStatus papc_problem_build(const char *name,
                                   size_t dim,
                                   uint64_t seed,
                                   struct PapcProblem **out);

/**
 * # Safety
 * `p` must be null or a handle from [`papc_problem_build`] not yet freed.
 */
void papc_problem_free(struct PapcProblem *p);

/**
 * Primal and dual dimensions of the iterates.
 *
 * # Safety
 * `p` must be a live handle; outputs must be writable.
 */
enum PapcStatus papc_problem_dims(const struct PapcProblem *p, size_t *primal, size_t *dual);

/**
 * Copies the reference solution.
 *
 * # Safety
 * `x` and `v` must hold `primal_len` and `dual_len` doubles.
 */
enum PapcStatus papc_problem_solution(const struct PapcProblem *p,
                                      double *x,
                                      size_t primal_len,
                                      double *v,
                                      size_t dual_len);

/**
 * Starts a run from zero with the problem's default step sizes and gaussian
 * noise of variance `sigma0_sq / (n+1)^(1+epsilon)` (`sigma0_sq = 0` for
 * exact gradients).
 *
 * # Safety
 * `p` must be a live handle; `out` must be writable.
 */
enum PapcStatus papc_solver_new(const struct PapcProblem *p,
                                double sigma0_sq,
                                double epsilon,
                                uint64_t seed,
                                struct PapcSolver **out);

/**
 * # Safety
 * `s` must be null or a handle from [`papc_solver_new`] not yet freed.
 */
void papc_solver_free(struct PapcSolver *s);

/**
 * Advances `count` iterations. On divergence the state stays at the last
 * finite iterate.
 *
 * # Safety
 * `s` must be a live handle.
 */
enum PapcStatus papc_solver_step(struct PapcSolver *s, size_t count);

/**
 * Current iteration count and iterates.
 *
 * # Safety
 * `x` and `v` must hold `primal_len` and `dual_len` doubles; `n` must be writable.
 */
enum PapcStatus papc_solver_state(const struct PapcSolver *s,
                                  size_t *n,
                                  double *x,
                                  size_t primal_len,
                                  double *v,
                                  size_t dual_len);

/**
 * Primal and dual KKT residuals of the current iterate.
 *
 * # Safety
 * `s` must be a live handle; outputs must be writable.
 */
enum PapcStatus papc_solver_kkt(const struct PapcSolver *s, double *primal, double *dual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAPC_H */
