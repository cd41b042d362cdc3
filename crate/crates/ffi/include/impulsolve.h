#ifndef IMPULSOLVE_H
#define IMPULSOLVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImpEpsFormula {
  IMP_EPS_FORMULA_PAPER = 0,
  IMP_EPS_FORMULA_THETA = 1,
} ImpEpsFormula;

typedef enum ImpStatus {
  IMP_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an out-of-range number.
   */
  IMP_STATUS_INVALID_ARGUMENT = 1,
  IMP_STATUS_PARSE = 2,
  /**
   * The input parsed but breaks a model rule.
   */
  IMP_STATUS_VALIDATION = 3,
  /**
   * A size guard stopped the computation.
   */
  IMP_STATUS_BUDGET_EXCEEDED = 4,
  IMP_STATUS_INTERNAL = 5,
} ImpStatus;

typedef struct ImpProblem ImpProblem;

typedef struct ImpSolution ImpSolution;

typedef struct ImpTree ImpTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses and validates a scenario tree document.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum ImpStatus imp_tree_from_json(const char *json, struct ImpTree **out);

/**
 * # Safety
 * `tree` must come from `imp_tree_from_json` and not be used afterwards.
 */
void imp_tree_free(struct ImpTree *tree);

/**
 * Parses and checks a problem document.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum ImpStatus imp_problem_from_json(const char *json, struct ImpProblem **out);

/**
 * # Safety
 * `problem` must come from `imp_problem_from_json` and not be used afterwards.
 */
void imp_problem_free(struct ImpProblem *problem);

/**
 * Solves in the problem's mode. A negative `n_cap` selects the default
 * budget `⌈T/Δ⌉ + 1`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum ImpStatus imp_solve(const struct ImpTree *tree,
                         const struct ImpProblem *problem,
                         int64_t n_cap,
                         struct ImpSolution **out);

/**
 * Root value, or NaN for a null handle.
 *
 * # Safety
 * `solution` must be null or live.
 */
double imp_solution_root_value(const struct ImpSolution *solution);

/**
 * Solve report as JSON; release with `imp_string_free`. Null for a null handle.
 *
 * # Safety
 * `solution` must be null or live.
 */
char *imp_solution_report_json(const struct ImpSolution *solution);

/**
 * Extracted strategy as JSON; release with `imp_string_free`.
 *
 * # Safety
 * `solution` must be null or live.
 */
char *imp_solution_strategy_json(const struct ImpSolution *solution);

/**
 * # Safety
 * `solution` must come from `imp_solve` and not be used afterwards.
 */
void imp_solution_free(struct ImpSolution *solution);

/**
 * Exact value of a strategy document: `J` when risk-neutral, `E[exp(ρC)]`
 * when risk-sensitive.
 *
 * # Safety
 * Handles must be live; `strategy_json` nul-terminated; `out_value` writable.
 */
enum ImpStatus imp_evaluate(const struct ImpTree *tree,
                            const struct ImpProblem *problem,
                            const char *strategy_json,
                            bool strict_horizon_charging,
                            double *out_value);

/**
 * Impulse budget after which the remaining value is below `eps`.
 *
 * # Safety
 * `problem` must be live; `out_n` writable.
 */
enum ImpStatus imp_eps_budget(const struct ImpProblem *problem,
                              double eps,
                              enum ImpEpsFormula formula,
                              size_t *out_n);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread; do not free.
 */
const char *imp_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void imp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMPULSOLVE_H */
