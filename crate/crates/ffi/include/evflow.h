#ifndef EVFLOW_H
#define EVFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvflowMode {
  EVFLOW_MODE_SPATIOTEMPORAL = 0,
  EVFLOW_MODE_FRAMEWISE = 1,
} EvflowMode;

typedef enum EvflowPreconditioner {
  EVFLOW_PRECONDITIONER_NONE = 0,
  EVFLOW_PRECONDITIONER_BLOCK_JACOBI = 1,
} EvflowPreconditioner;

typedef enum EvflowStatus {
  EVFLOW_STATUS_OK = 0,
  EVFLOW_STATUS_NULL_POINTER = 1,
  EVFLOW_STATUS_INVALID_ARGUMENT = 2,
  EVFLOW_STATUS_DIM_MISMATCH = 3,
  EVFLOW_STATUS_IO = 4,
  EVFLOW_STATUS_FORMAT = 5,
  EVFLOW_STATUS_GEOMETRY = 6,
  EVFLOW_STATUS_DATA = 7,
  /**
   * The solver stopped before reaching its tolerance; the result handle
   * is still filled in.
   */
  EVFLOW_STATUS_NOT_CONVERGED = 8,
  EVFLOW_STATUS_INTERNAL = 9,
} EvflowStatus;

/**
 * Result of a solve: frame coordinates, tangential and total velocity.
 */
typedef struct EvflowFlow EvflowFlow;

/**
 * Height field and intensities on a common grid.
 */
typedef struct EvflowSurface EvflowSurface;

/**
 * Solve settings. Obtain defaults from [`evflow_params_default`].
 */
typedef struct EvflowParams {
  double lambda0;
  double lambda1;
  enum EvflowMode mode;
  double rel_tol;
  size_t max_iters;
  size_t restart;
  enum EvflowPreconditioner preconditioner;
} EvflowParams;

/**
 * Summary of a solve.
 */
typedef struct EvflowStats {
  size_t iterations;
  double rel_residual;
  bool converged;
  double energy_before;
  double energy_after;
  double wall_time_s;
} EvflowStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *evflow_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated and
 * NUL-terminated) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t evflow_last_error(char *buf, size_t len);

/**
 * Defaults: `λ0 = 0.005`, `λ1 = 0.05`, spatiotemporal, tolerance 0.02,
 * 2000 iterations, restart 30, no preconditioner.
 */
struct EvflowParams evflow_params_default(void);

/**
 * Builds a surface from `n0·n1·n2` heights and intensities on the unit cube
 * grid (`h_σ = 1/n_σ`).
 *
 * # Safety
 * `z` and `f` must point to `n0·n1·n2` doubles; `out` must be writable.
 */
enum EvflowStatus evflow_surface_new(size_t n0,
                                     size_t n1,
                                     size_t n2,
                                     const double *z,
                                     const double *f,
                                     struct EvflowSurface **out);

/**
 * Loads a surface from a height EVSF file and an intensity EVSF file.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum EvflowStatus evflow_surface_load(const char *z_path,
                                      const char *f_path,
                                      struct EvflowSurface **out);

/**
 * Writes the grid dimensions `(n0, n1, n2)` into `dims`.
 *
 * # Safety
 * `surface` must be a live handle; `dims` must hold 3 values.
 */
enum EvflowStatus evflow_surface_dims(const struct EvflowSurface *surface, size_t *dims);

/**
 * # Safety
 * `surface` must be null or a handle from this library, freed once.
 */
void evflow_surface_free(struct EvflowSurface *surface);

/**
 * Estimates the flow. Returns `Ok`, or `NotConverged` with `*out` still set
 * when the solver ran out of iterations.
 *
 * # Safety
 * `surface` must be a live handle; `params` null (defaults) or valid;
 * `out` must be writable.
 */
enum EvflowStatus evflow_solve(const struct EvflowSurface *surface,
                               const struct EvflowParams *params,
                               struct EvflowFlow **out);

/**
 * # Safety
 * `flow` must be a live handle; `stats` must be writable.
 */
enum EvflowStatus evflow_flow_stats(const struct EvflowFlow *flow, struct EvflowStats *stats);

/**
 * Copies the frame coordinates `(w1, w2)` per gridpoint; `len = 2·n0·n1·n2`.
 *
 * # Safety
 * `flow` must be a live handle; `out` valid for `len` doubles.
 */
enum EvflowStatus evflow_flow_copy_w(const struct EvflowFlow *flow, double *out, size_t len);

/**
 * Copies the tangential velocity `u` per gridpoint; `len = 3·n0·n1·n2`.
 *
 * # Safety
 * `flow` must be a live handle; `out` valid for `len` doubles.
 */
enum EvflowStatus evflow_flow_copy_u(const struct EvflowFlow *flow, double *out, size_t len);

/**
 * Copies the total velocity `m = u + V` per gridpoint; `len = 3·n0·n1·n2`.
 *
 * # Safety
 * `flow` must be a live handle; `out` valid for `len` doubles.
 */
enum EvflowStatus evflow_flow_copy_m(const struct EvflowFlow *flow, double *out, size_t len);

/**
 * Writes `w.evsf`, `u.evsf`, `m.evsf` and `flow_NNN.ppm` into `dir`,
 * normalising colours by the 99th-percentile magnitude of the sequence.
 *
 * # Safety
 * `flow` must be a live handle; `dir` a NUL-terminated path.
 */
enum EvflowStatus evflow_flow_write(const struct EvflowFlow *flow, const char *dir);

/**
 * # Safety
 * `flow` must be null or a handle from this library, freed once.
 */
void evflow_flow_free(struct EvflowFlow *flow);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVFLOW_H */
