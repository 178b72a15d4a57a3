#ifndef SPARSECTL_H
#define SPARSECTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SparsectlStatus {
  SPARSECTL_STATUS_OK = 0,
  SPARSECTL_STATUS_NULL_POINTER = 1,
  SPARSECTL_STATUS_INVALID_ARGUMENT = 2,
  SPARSECTL_STATUS_RANK_DEFICIENT = 3,
  SPARSECTL_STATUS_ASSUMPTION_VIOLATED = 4,
  SPARSECTL_STATUS_INFEASIBLE = 5,
  SPARSECTL_STATUS_INVALID_CERTIFICATE = 6,
  SPARSECTL_STATUS_PLAN_MISMATCH = 7,
  SPARSECTL_STATUS_IO = 8,
  SPARSECTL_STATUS_PANIC = 9,
} SparsectlStatus;

typedef enum SparsectlVerdict {
  SPARSECTL_VERDICT_CONVERGED = 0,
  SPARSECTL_VERDICT_DIVERGED = 1,
  SPARSECTL_VERDICT_INCONCLUSIVE = 2,
} SparsectlVerdict;

// Opaque plan handle.
typedef struct SparsectlPlan SparsectlPlan;

// Opaque plant handle.
typedef struct SparsectlPlant SparsectlPlant;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failed call on this thread, or NULL.
// The pointer stays valid until the next call on the same thread.
const char *sparsectl_last_error(void);

// Library version as a static NUL-terminated string.
const char *sparsectl_version(void);

// Resolves a model URI (`builtin:converter`, `builtin:grid?nodes=50`,
// `builtin:chain?N=20`) or a plant file path.
//
// # Safety
// `uri` must be a NUL-terminated string and `out` a valid pointer.
enum SparsectlStatus sparsectl_plant_from_uri(const char *uri, struct SparsectlPlant **out);

// Builds a plant from row-major `a` (n×n) and `b` (n×m).
//
// # Safety
// `a` must hold n·n values, `b` n·m values, and `out` must be valid.
enum SparsectlStatus sparsectl_plant_from_matrices(size_t n,
                                                   size_t m,
                                                   const double *a,
                                                   const double *b,
                                                   struct SparsectlPlant **out);

// # Safety
// `plant` must come from this library and not be freed twice. NULL is a no-op.
void sparsectl_plant_free(struct SparsectlPlant *plant);

// # Safety
// `plant`, `n` and `m` must be valid pointers.
enum SparsectlStatus sparsectl_plant_dims(const struct SparsectlPlant *plant, size_t *n, size_t *m);

// Checks full column rank of B and a_n < 1. Writes a_n (NaN when B is
// rank deficient) and sets `*ok` to 1 when both hold. A violated
// assumption is reported through `*ok`, not the status.
//
// # Safety
// All pointers must be valid.
enum SparsectlStatus sparsectl_check(const struct SparsectlPlant *plant, double *a_n, int32_t *ok);

// Single-probability synthesis. Pass `delta = 0.01`, `p_floor = 1e-4`,
// `epsilon_p = 1e-4` for the usual defaults.
//
// # Safety
// `plant` and `out` must be valid.
enum SparsectlStatus sparsectl_synth_uniform(const struct SparsectlPlant *plant,
                                             double delta,
                                             double p_floor,
                                             double epsilon_p,
                                             struct SparsectlPlan **out);

// Per-coordinate synthesis. `weights` holds n sensing costs, or is NULL
// for unit costs.
//
// # Safety
// `plant` and `out` must be valid; non-null `weights` must hold n values.
enum SparsectlStatus sparsectl_synth_adaptive(const struct SparsectlPlant *plant,
                                              const double *weights,
                                              double delta,
                                              double p_floor,
                                              double epsilon_p,
                                              struct SparsectlPlan **out);

// # Safety
// `plan` must come from this library and not be freed twice. NULL is a no-op.
void sparsectl_plan_free(struct SparsectlPlan *plan);

// Copies the m×n gain, row-major, into `out` (`len` must be m·n).
//
// # Safety
// `plan` must be valid and `out` must hold `len` values.
enum SparsectlStatus sparsectl_plan_gain(const struct SparsectlPlan *plan, double *out, size_t len);

// Copies the n activation probabilities into `out`.
//
// # Safety
// `plan` must be valid and `out` must hold `len` values.
enum SparsectlStatus sparsectl_plan_probs(const struct SparsectlPlan *plan,
                                          double *out,
                                          size_t len);

// Scalar summary of a plan. Any output pointer may be NULL.
//
// # Safety
// `plan` must be valid; non-null outputs must be writable.
enum SparsectlStatus sparsectl_plan_summary(const struct SparsectlPlan *plan,
                                            double *gamma,
                                            double *d_norm_sq,
                                            double *contraction,
                                            double *expected_sparsity);

// Monte Carlo ensemble at the plan's probabilities. Writes the per-step
// mean squared norm (`len` must be steps + 1) and the decay verdict.
//
// # Safety
// `plant` and `plan` must be valid, `mean_sq_norm` must hold `len` values
// and `verdict` may be NULL.
enum SparsectlStatus sparsectl_simulate(const struct SparsectlPlant *plant,
                                        const struct SparsectlPlan *plan,
                                        size_t runs,
                                        size_t steps,
                                        double sigma,
                                        uint64_t seed,
                                        double *mean_sq_norm,
                                        size_t len,
                                        enum SparsectlVerdict *verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSECTL_H */
