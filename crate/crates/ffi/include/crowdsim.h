#ifndef CROWDSIM_H
#define CROWDSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsCommand {
  CS_COMMAND_SIMULATE = 0,
  CS_COMMAND_NAVFIELD = 1,
  CS_COMMAND_VERIFY_REFLECT = 2,
  CS_COMMAND_VERIFY_STABILITY = 3,
  CS_COMMAND_VERIFY_CONVERGENCE = 4,
  CS_COMMAND_NONDIM = 5,
} CsCommand;

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_VALIDATION = 2,
  CS_STATUS_PARSE = 3,
  CS_STATUS_OUTSIDE_DOMAIN = 4,
  CS_STATUS_NOT_ON_BOUNDARY = 5,
  CS_STATUS_AMBIGUOUS_PROJECTION = 6,
  CS_STATUS_EMPTY_CONE = 7,
  CS_STATUS_STUCK_IN_CORNER = 8,
  CS_STATUS_SOLVE_FAILED = 9,
  CS_STATUS_TRANSFORM_RANGE = 10,
  CS_STATUS_IO = 11,
  CS_STATUS_PANIC = 12,
} CsStatus;

// Opaque validated domain.
typedef struct CsDomain CsDomain;

// Opaque resolved scenario.
typedef struct CsScenario CsScenario;

typedef struct CsVec2 {
  double x;
  double y;
} CsVec2;

// Piece `[t0, t1]` of outer edge `edge`, absorbing within `r_e`.
typedef struct CsExit {
  size_t edge;
  double t0;
  double t1;
  double r_e;
} CsExit;

typedef struct CsScales {
  double x_ref;
  double t_ref;
  double s_ref;
  double p_ref;
  double upsilon_ref;
  double omega_ref;
  double beta_ref;
  double phi_ref;
  double mu_ref;
  double p_max;
} CsScales;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cs_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length
// plus one, so a caller can size a buffer with `cs_last_error_message(NULL, 0)`.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t cs_last_error_message(char *buf, size_t len);

// Builds a domain. Holes are passed as one flat vertex array split by
// `hole_sizes`; the last hole is the fire polygon when `last_is_fire` is set.
//
// # Safety
// Every pointer must be null (only allowed with a zero count) or valid for
// the given number of elements; `out` must be writable.
enum CsStatus cs_domain_new(const struct CsVec2 *outer,
                            size_t n_outer,
                            const struct CsVec2 *hole_vertices,
                            const size_t *hole_sizes,
                            size_t n_holes,
                            bool last_is_fire,
                            const struct CsExit *exits,
                            size_t n_exits,
                            double r0,
                            struct CsDomain **out);

// # Safety
// `d` must be null or a pointer from [`cs_domain_new`] not yet freed.
void cs_domain_free(struct CsDomain *d);

// # Safety
// `d` must be a live domain handle and `out` writable.
enum CsStatus cs_domain_contains(const struct CsDomain *d, struct CsVec2 p, bool *out);

// Nearest point of the closed domain and the distance to it.
//
// # Safety
// `d` must be a live domain handle; `out_point` and `out_distance` writable.
enum CsStatus cs_domain_project(const struct CsDomain *d,
                                struct CsVec2 p,
                                struct CsVec2 *out_point,
                                double *out_distance);

// Reflects the straight driving segment `x -> x + delta` inside the domain.
//
// # Safety
// `d` must be a live domain handle; `out_end` and `out_dphi` writable.
enum CsStatus cs_reflect_increment(const struct CsDomain *d,
                                   struct CsVec2 x,
                                   struct CsVec2 delta,
                                   struct CsVec2 *out_end,
                                   struct CsVec2 *out_dphi);

// One-dimensional Skorohod map of a piecewise-linear path on `[0, ∞)`.
//
// # Safety
// `times` and `values` must hold `n` readable doubles; `out_xi` and
// `out_phi` must hold `n` writable doubles.
enum CsStatus cs_gamma_1d(const double *times,
                          const double *values,
                          size_t n,
                          double *out_xi,
                          double *out_phi);

// Writes the four dimensionless groups into `out[0..4]`.
//
// # Safety
// `scales` must be readable and `out` must hold 4 writable doubles.
enum CsStatus cs_dimensionless_groups(const struct CsScales *scales, double *out);

// # Safety
// `scales` must be readable and `out` writable.
enum CsStatus cs_kappa(const struct CsScales *scales, double *out);

// Loads and validates a scenario document.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
enum CsStatus cs_scenario_load(const char *path, struct CsScenario **out);

// # Safety
// `s` must be null or a pointer from [`cs_scenario_load`] not yet freed.
void cs_scenario_free(struct CsScenario *s);

// Number of pedestrians and the resolved rate `kappa` of a scenario.
//
// # Safety
// `s` must be a live scenario handle; outputs writable.
enum CsStatus cs_scenario_info(const struct CsScenario *s,
                               size_t *out_pedestrians,
                               double *out_kappa);

// Runs a CLI command on a scenario file. `out_dir` may be null to keep the
// document's directory; `seed` is applied when `use_seed` is set. The
// command's process exit code (0, 1, 2 or 3) is written to `out_exit_code`;
// the status reports only whether the call itself could be made.
//
// # Safety
// `path` must be a NUL-terminated string, `out_dir` null or one, and
// `out_exit_code` writable.
enum CsStatus cs_run(enum CsCommand command,
                     const char *path,
                     const char *out_dir,
                     bool use_seed,
                     uint64_t seed,
                     size_t workers,
                     int32_t *out_exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROWDSIM_H */
