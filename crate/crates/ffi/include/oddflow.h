#ifndef ODDFLOW_H
#define ODDFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OddflowStatus {
  ODDFLOW_STATUS_OK = 0,
  ODDFLOW_STATUS_NULL_POINTER = 1,
  ODDFLOW_STATUS_INVALID_ARGUMENT = 2,
  // The configuration could not be parsed or failed validation.
  ODDFLOW_STATUS_CONFIG = 3,
  // Vacuum proximity, CFL violation, elliptic non-convergence or non-finite values.
  ODDFLOW_STATUS_NUMERICAL = 4,
  ODDFLOW_STATUS_IO = 5,
  // The caller's buffer is shorter than the grid.
  ODDFLOW_STATUS_BUFFER_TOO_SMALL = 6,
  ODDFLOW_STATUS_PANIC = 7,
} OddflowStatus;

// Opaque simulation handle.
typedef struct OddflowSimulation OddflowSimulation;

// Diagnostics at the current time.
typedef struct OddflowDiagnostics {
  double t;
  double e_u;
  double e_big_u;
  double div_u_max;
  double elsasser_residual;
  double rho_min;
  double rho_max;
  double rho_mean;
  uint64_t steps;
} OddflowDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string. The pointer
// stays valid until the next failing call on the same thread.
const char *oddflow_last_error(void);

// Library version as a static NUL-terminated string.
const char *oddflow_version(void);

// Creates a simulation from a JSON configuration; `config_json` may be NULL for the
// defaults. On success `*out` owns a handle to release with [`oddflow_simulation_free`].
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string; `out` must be writable.
enum OddflowStatus oddflow_simulation_new(const char *config_json, struct OddflowSimulation **out);

// Releases a handle; NULL is ignored.
//
// # Safety
// `sim` must be NULL or a handle from [`oddflow_simulation_new`] not yet freed.
void oddflow_simulation_free(struct OddflowSimulation *sim);

// Grid points per side.
//
// # Safety
// `sim` must be a live handle and `n` writable.
enum OddflowStatus oddflow_simulation_grid_size(const struct OddflowSimulation *sim, size_t *n);

// Current simulation time.
//
// # Safety
// `sim` must be a live handle and `t` writable.
enum OddflowStatus oddflow_simulation_time(const struct OddflowSimulation *sim, double *t);

// One RK4 step of size `dt`.
//
// # Safety
// `sim` must be a live handle.
enum OddflowStatus oddflow_simulation_step(struct OddflowSimulation *sim, double dt);

// Advances to `t_end` with the configured step (or the CFL step if none is set).
//
// # Safety
// `sim` must be a live handle.
enum OddflowStatus oddflow_simulation_run_until(struct OddflowSimulation *sim, double t_end);

// Copies the density, row-major, into `rho[0..n*n]`.
//
// # Safety
// `sim` must be a live handle and `rho` valid for `len` writes.
enum OddflowStatus oddflow_simulation_density(const struct OddflowSimulation *sim,
                                              double *rho,
                                              size_t len);

// Copies both velocity components, row-major, into `ux` and `uy`.
//
// # Safety
// `sim` must be a live handle; `ux` and `uy` must each be valid for `len` writes.
enum OddflowStatus oddflow_simulation_velocity(const struct OddflowSimulation *sim,
                                               double *ux,
                                               double *uy,
                                               size_t len);

// Diagnostics of the current state.
//
// # Safety
// `sim` must be a live handle and `out` writable.
enum OddflowStatus oddflow_simulation_diagnostics(const struct OddflowSimulation *sim,
                                                  struct OddflowDiagnostics *out);

// Writes the current state, pressure and effective velocity as a snapshot file.
//
// # Safety
// `sim` must be a live handle and `path` a NUL-terminated string.
enum OddflowStatus oddflow_simulation_write_snapshot(const struct OddflowSimulation *sim,
                                                     const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODDFLOW_H */
