#ifndef MVRISK_H
#define MVRISK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MvrStatus {
  MVR_STATUS_OK = 0,
  MVR_STATUS_NULL_POINTER = 1,
  MVR_STATUS_INVALID_UTF8 = 2,
  MVR_STATUS_PARSE = 3,
  MVR_STATUS_VALIDATION = 4,
  MVR_STATUS_NUMERICAL = 5,
  MVR_STATUS_BUFFER_TOO_SMALL = 6,
  MVR_STATUS_PANIC = 7,
} MvrStatus;

/**
 * Verdicts written by [`mvr_check_mptc`].
 */
typedef enum MvrVerdict {
  MVR_VERDICT_HOLDS = 0,
  MVR_VERDICT_VIOLATED = 1,
  MVR_VERDICT_INCONCLUSIVE = 2,
} MvrVerdict;

/**
 * An acceptance system together with its tree.
 */
typedef struct MvrSystem MvrSystem;

/**
 * A validated scenario tree.
 */
typedef struct MvrTree MvrTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a tree from JSON text. On success `*out` owns a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MvrStatus mvr_tree_from_json(const char *json, struct MvrTree **out);

/**
 * Number of nodes at time `t`, or 0 when `t` exceeds the horizon.
 *
 * # Safety
 * `tree` must be null or a live handle.
 */
size_t mvr_tree_nodes_at(const struct MvrTree *tree, size_t t);

/**
 * # Safety
 * `tree` must be null or a handle not yet freed.
 */
void mvr_tree_free(struct MvrTree *tree);

/**
 * Superhedging system of the market in `market_json`; null means
 * frictionless exchange at rate one.
 *
 * # Safety
 * `tree` must be a live handle, `market_json` null or NUL-terminated, `out` valid.
 */
enum MvrStatus mvr_system_superhedging(const struct MvrTree *tree,
                                       const char *market_json,
                                       struct MvrSystem **out);

/**
 * Composed AV@R system from levels in `avar_json`.
 *
 * # Safety
 * `tree` must be a live handle, `avar_json` NUL-terminated, `out` valid.
 */
enum MvrStatus mvr_system_composed_avar(const struct MvrTree *tree,
                                        const char *avar_json,
                                        struct MvrSystem **out);

/**
 * # Safety
 * `system` must be null or a handle not yet freed.
 */
void mvr_system_free(struct MvrSystem *system);

/**
 * `ρ_t^w(X)` at every time-`t` node, with the `d`-vector `w` used at each
 * node. Infinite values are written as `±INFINITY`. `*written` receives
 * the number of nodes even when the buffer is too small.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `claim_json` NUL-terminated.
 */
enum MvrStatus mvr_scalarize(const struct MvrSystem *system,
                             const char *claim_json,
                             size_t t,
                             const double *w,
                             size_t w_len,
                             double *out,
                             size_t out_len,
                             size_t *written);

/**
 * `ρ_t^w(X)` minus the moving-scalarization right-hand side at every
 * time-`t` node, for the pair `t < s`.
 *
 * # Safety
 * As for [`mvr_scalarize`].
 */
enum MvrStatus mvr_recursion_gap(const struct MvrSystem *system,
                                 const char *claim_json,
                                 size_t t,
                                 size_t s,
                                 const double *w,
                                 size_t w_len,
                                 double *out,
                                 size_t out_len,
                                 size_t *written);

/**
 * Checks `A_t = A_{t,s} + A_s` at every time-`t` node. `exact` non-zero
 * requests the exact generator test where available; `directions` and
 * `seed` configure the sampled test.
 *
 * # Safety
 * `system` must be a live handle and `verdict` a valid pointer.
 */
enum MvrStatus mvr_check_mptc(const struct MvrSystem *system,
                              size_t t,
                              size_t s,
                              int exact,
                              size_t directions,
                              uint64_t seed,
                              enum MvrVerdict *verdict);

/**
 * Copies the last error message of this thread into `buf` with a
 * terminating NUL. `*needed` receives the buffer size required, NUL
 * included. An empty message means the last call succeeded.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null with `len == 0`.
 */
enum MvrStatus mvr_last_error_message(char *buf, size_t len, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVRISK_H */
