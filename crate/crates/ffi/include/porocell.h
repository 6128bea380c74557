#ifndef POROCELL_H
#define POROCELL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcForcing {
  PC_FORCING_BOUNDED_PRESSURE = 0,
  PC_FORCING_POTENTIAL = 1,
  PC_FORCING_SOLID_SUPPORTED = 2,
} PcForcing;

/**
 * Built-in test geometries.
 */
typedef enum PcShape {
  /**
   * Fluid layers of `param` voxels normal to z.
   */
  PC_SHAPE_LAMINATE = 0,
  /**
   * Cubic solid inclusion of side `param` in connected fluid.
   */
  PC_SHAPE_INCLUSION = 1,
  /**
   * Cubic fluid pore of side `param` in connected solid.
   */
  PC_SHAPE_PORE = 2,
  /**
   * No fluid.
   */
  PC_SHAPE_SOLID = 3,
} PcShape;

/**
 * Result code of every fallible call.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_ARGUMENT = 1,
  PC_STATUS_INVALID_INPUT = 2,
  PC_STATUS_PARSE = 3,
  PC_STATUS_IO = 4,
  PC_STATUS_NOT_CONVERGED = 5,
  PC_STATUS_INADMISSIBLE = 6,
  PC_STATUS_OUTSIDE_COVERAGE = 7,
  PC_STATUS_NOT_APPLICABLE = 8,
  PC_STATUS_ILL_POSED = 9,
  PC_STATUS_ASYMMETRIC = 10,
  PC_STATUS_PANIC = 11,
} PcStatus;

/**
 * Opaque voxel cell.
 */
typedef struct PcCell PcCell;

/**
 * Opaque classification result.
 */
typedef struct PcRegime PcRegime;

typedef struct PcConnectivity {
  bool fluid_connected;
  bool solid_connected;
  bool pores_isolated;
  bool fluid_wraps[3];
  size_t fluid_components;
  size_t solid_components;
} PcConnectivity;

/**
 * One scaled parameter `c · ε^(num/den)`.
 */
typedef struct PcExponent {
  double c;
  int64_t num;
  int64_t den;
} PcExponent;

typedef struct PcScaling {
  struct PcExponent tau;
  struct PcExponent nu;
  struct PcExponent mu;
  struct PcExponent p;
  struct PcExponent eta;
  struct PcExponent lambda;
  double rho_f;
  double rho_s;
} PcScaling;

typedef struct PcSolverOptions {
  double tol;
  size_t max_iter;
  /**
   * Run independent load cases on the global thread pool.
   */
  bool parallel;
} PcSolverOptions;

/**
 * Effective elastic coefficients. 6×6 blocks are row-major in Mandel
 * order (11, 22, 33, 23, 13, 12); 3×3 blocks are row-major.
 */
typedef struct PcElastic {
  double a0s[36];
  double a1s[36];
  double b0s[9];
  double c0s[9];
  double a0s_scalar;
  double porosity;
  double rho_hat;
} PcElastic;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Returns the buffer size
 * needed; pass a null buffer to query it.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pc_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pc_version(void);

/**
 * Loads a `.cellgeo` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_cell_load(const char *path, struct PcCell **out);

/**
 * Parses `.cellgeo` text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_cell_parse(const char *text, struct PcCell **out);

/**
 * Builds a cell from a 0/1 indicator (1 = fluid), x fastest.
 *
 * # Safety
 * `chi` must point to `nx*ny*nz` bytes; `out` must be writable.
 */
enum PcStatus pc_cell_from_indicator(size_t nx,
                                     size_t ny,
                                     size_t nz,
                                     const uint8_t *chi,
                                     struct PcCell **out);

/**
 * Builds one of the test geometries; `param` is the layer count or the
 * cube side, ignored for `Solid`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_cell_builtin(enum PcShape shape,
                              size_t nx,
                              size_t ny,
                              size_t nz,
                              size_t param,
                              struct PcCell **out);

/**
 * Releases a cell; null is ignored.
 *
 * # Safety
 * `cell` must come from a `pc_cell_*` constructor and not be used again.
 */
void pc_cell_free(struct PcCell *cell);

/**
 * # Safety
 * `cell` must be a live handle; `dims` must point to 3 writable values.
 */
enum PcStatus pc_cell_dims(const struct PcCell *cell, size_t *dims);

/**
 * # Safety
 * `cell` must be a live handle; `out` must be writable.
 */
enum PcStatus pc_cell_porosity(const struct PcCell *cell, double *out);

/**
 * # Safety
 * `cell` must be a live handle; `out` must be writable.
 */
enum PcStatus pc_cell_connectivity(const struct PcCell *cell, struct PcConnectivity *out);

/**
 * Classifies the scaling regime for the given connectivity.
 *
 * # Safety
 * `scaling` and `conn` must be readable; `out` must be writable.
 */
enum PcStatus pc_classify(const struct PcScaling *scaling,
                          const struct PcConnectivity *conn,
                          enum PcForcing forcing,
                          struct PcRegime **out);

/**
 * Releases a regime; null is ignored.
 *
 * # Safety
 * `regime` must come from [`pc_classify`] and not be used again.
 */
void pc_regime_free(struct PcRegime *regime);

/**
 * Interface tag of the selected approximation, e.g. `T2_2_I`. Returns the
 * buffer size needed, 0 if `regime` is null.
 *
 * # Safety
 * `regime` must be a live handle; `buf` null or `len` writable bytes.
 */
size_t pc_regime_tag(const struct PcRegime *regime, char *buf, size_t len);

/**
 * Comma-separated cell problems of the regime and its second
 * approximation.
 *
 * # Safety
 * As for [`pc_regime_tag`].
 */
size_t pc_regime_cell_problems(const struct PcRegime *regime, char *buf, size_t len);

/**
 * Whether a second approximation is attached.
 *
 * # Safety
 * `regime` must be null or a live handle.
 */
bool pc_regime_has_second(const struct PcRegime *regime);

/**
 * Value of a limit parameter bound by the regime (`lambda0`, `eta0`,
 * `mu0`, `mu1`, `tau0`, `nu0`, `p_star`). `NotApplicable` when unbound.
 *
 * # Safety
 * `regime` must be a live handle, `name` NUL-terminated, `out` writable.
 */
enum PcStatus pc_regime_binding(const struct PcRegime *regime, const char *name, double *out);

/**
 * Elastic cell problems and the effective elastic set. `eta0` may be
 * `INFINITY` for an incompressible skeleton.
 *
 * # Safety
 * `cell` must be a live handle; `opts` readable; `out` writable.
 */
enum PcStatus pc_solve_elastic(const struct PcCell *cell,
                               double lambda0,
                               double eta0,
                               const struct PcSolverOptions *opts,
                               struct PcElastic *out);

/**
 * Steady Stokes permeability `B2` (row-major 3×3).
 *
 * # Safety
 * `cell` must be a live handle; `opts` readable; `b2` 9 writable values.
 */
enum PcStatus pc_solve_stokes(const struct PcCell *cell,
                              double mu1,
                              const struct PcSolverOptions *opts,
                              double *b2);

/**
 * Potential-flow tensor `B3` (row-major 3×3).
 *
 * # Safety
 * `cell` must be a live handle; `opts` readable; `b3` 9 writable values.
 */
enum PcStatus pc_solve_b3(const struct PcCell *cell,
                          const struct PcSolverOptions *opts,
                          double *b3);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POROCELL_H */
