#ifndef FLUXBOUND_H
#define FLUXBOUND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FbStatus {
  FB_STATUS_OK = 0,
  FB_STATUS_NULL_POINTER = 1,
  FB_STATUS_INVALID_PARAMETER = 2,
  FB_STATUS_DIMENSION = 3,
  FB_STATUS_NOT_MEAN_FREE = 4,
  FB_STATUS_NOT_INCOMPRESSIBLE = 5,
  FB_STATUS_BOUNDARY_VIOLATION = 6,
  FB_STATUS_NO_CONVERGENCE = 7,
  FB_STATUS_DEGENERATE_TEST_FUNCTION = 8,
  FB_STATUS_DEGENERATE_FLOW = 9,
  FB_STATUS_CFL = 10,
  FB_STATUS_CONSISTENCY = 11,
  FB_STATUS_RESOLUTION = 12,
  FB_STATUS_CONFIG = 13,
  FB_STATUS_IO = 14,
  FB_STATUS_PANIC = 15,
} FbStatus;

/**
 * Opaque scalar field handle.
 */
typedef struct FbField FbField;

/**
 * Opaque grid handle.
 */
typedef struct FbGrid FbGrid;

/**
 * Opaque velocity field handle.
 */
typedef struct FbVelocity FbVelocity;

typedef struct FbCertificate {
  double lower;
  double upper;
  double dissipation;
  double gap_lower;
  double gap_upper;
  double solver_residual;
  uint64_t iterations;
} FbCertificate;

typedef struct FbRayleighBound {
  /**
   * −1, 0 or 1 for the sign of the potential coupling.
   */
  int32_t regime;
  double exponent;
  double bound;
  /**
   * NaN when the regime has no threshold.
   */
  double threshold;
  bool above_threshold;
} FbRayleighBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *fb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fb_version(void);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum FbStatus fb_grid_new(double x_min,
                          double x_max,
                          double y_min,
                          double y_max,
                          size_t nx,
                          size_t ny,
                          struct FbGrid **out);

/**
 * # Safety
 * `grid` must come from `fb_grid_new` or be null.
 */
void fb_grid_free(struct FbGrid *grid);

/**
 * Field from `nx*ny` row-major nodal values.
 *
 * # Safety
 * `values` must point to `len` doubles.
 */
enum FbStatus fb_field_from_values(const struct FbGrid *grid,
                                   const double *values,
                                   size_t len,
                                   struct FbField **out);

/**
 * Copy the nodal values into `buf`, which must hold the field length.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum FbStatus fb_field_values(const struct FbField *field, double *buf, size_t len);

/**
 * # Safety
 * `field` must come from this library or be null.
 */
void fb_field_free(struct FbField *field);

/**
 * ½cos(2y/ℓ) − ½cos(2x/ℓ) on a grid over (0, 2π)².
 *
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_sinusoidal_source(const struct FbGrid *grid, double ell, struct FbField **out);

/**
 * Concentrated source and sink of radius ε on a grid over (−1, 1)².
 *
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_concentrated_source(const struct FbGrid *grid, double eps, struct FbField **out);

/**
 * Velocity from row-major component arrays of length `len`.
 *
 * # Safety
 * `ux` and `uy` must point to `len` doubles each.
 */
enum FbStatus fb_velocity_from_values(const struct FbGrid *grid,
                                      const double *ux,
                                      const double *uy,
                                      size_t len,
                                      struct FbVelocity **out);

/**
 * Cellular flow for cell size ℓ, scaled to ⨍|u|² = pe².
 *
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_velocity_cellular(const struct FbGrid *grid,
                                   double ell,
                                   double pe,
                                   struct FbVelocity **out);

/**
 * Pinching flow for source radius ε, scaled to ⨍|u|² = pe².
 *
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_velocity_pinching(const struct FbGrid *grid,
                                   double eps,
                                   double pe,
                                   struct FbVelocity **out);

/**
 * # Safety
 * `u` must come from this library or be null.
 */
void fb_velocity_free(struct FbVelocity *u);

/**
 * Solve the steady problem; writes ⟨|∇T|²⟩ and, if `out_t` is non-null,
 * a new handle to T.
 *
 * # Safety
 * Pointers must be valid; `out_t` may be null.
 */
enum FbStatus fb_solve_steady(const struct FbVelocity *u,
                              const struct FbField *f,
                              double *out_dissipation,
                              struct FbField **out_t);

/**
 * Lower and upper bounds at the symmetrised optimal pair.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_certify_sharpness(const struct FbVelocity *u,
                                   const struct FbField *f,
                                   struct FbCertificate *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_bmo_norm(const struct FbField *field, double *out);

/**
 * Hardy maximal-function integral with the default mollifier ladder.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FbStatus fb_hardy_maximal(const struct FbField *field, double *out);

/**
 * Rayleigh-number bound from precomputed constants and coupling ⨍fφ.
 * A coupling with |⨍fφ| ≤ ztol counts as zero.
 *
 * # Safety
 * `out` must be valid.
 */
enum FbStatus fb_rayleigh_bound(double c1,
                                double c2,
                                double c3,
                                double coupling,
                                double ztol,
                                double g_norm_sq,
                                double ra,
                                struct FbRayleighBound *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLUXBOUND_H */
