/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SMOLPOD_H
#define SMOLPOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum SmolpodStatus {
  SMOLPOD_STATUS_OK = 0,
  SMOLPOD_STATUS_NULL_POINTER = 1,
  SMOLPOD_STATUS_INVALID_ARGUMENT = 2,
  SMOLPOD_STATUS_DIMENSION_MISMATCH = 3,
  SMOLPOD_STATUS_DIVERGENCE = 4,
  SMOLPOD_STATUS_IO = 5,
  SMOLPOD_STATUS_FORMAT = 6,
  SMOLPOD_STATUS_REFUSED = 7,
  SMOLPOD_STATUS_DECOMPOSITION = 8,
  SMOLPOD_STATUS_PANIC = 9,
} SmolpodStatus;

/*
 Orthonormal reduction basis, `N × R`.
 */
typedef struct SmolpodBasis SmolpodBasis;

/*
 Reduced system of dimension `R`.
 */
typedef struct SmolpodReduced SmolpodReduced;

/*
 Full aggregation system: kernel plus source.
 */
typedef struct SmolpodSystem SmolpodSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *smolpod_version(void);

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call into the library on this thread.
 */
const char *smolpod_last_error(void);

/*
 Creates a system with kernel `i^a j^-a + i^-a j^a` and monomer source
 `J = source_rate · e_1`.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum SmolpodStatus smolpod_system_new_brownian(size_t size,
                                               double a,
                                               double source_rate,
                                               struct SmolpodSystem **out);

/*
 Creates a system with kernel `i^nu j^mu + i^mu j^nu + c` and monomer source.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum SmolpodStatus smolpod_system_new_generalized(size_t size,
                                                  double nu,
                                                  double mu,
                                                  double c,
                                                  double source_rate,
                                                  struct SmolpodSystem **out);

/*
 # Safety
 `sys` must be null or a handle from this library not yet freed.
 */
void smolpod_system_free(struct SmolpodSystem *sys);

/*
 Number of mass classes `N`, or 0 for a null handle.

 # Safety
 `sys` must be null or a live handle.
 */
size_t smolpod_system_size(const struct SmolpodSystem *sys);

/*
 Writes `dn/dt` at state `n` into `out`; both have length `N`.

 # Safety
 `sys` must be a live handle; `n` and `out` must point to `len`/`out_len` doubles.
 */
enum SmolpodStatus smolpod_system_rhs(struct SmolpodSystem *sys,
                                      const double *n,
                                      size_t len,
                                      double *out,
                                      size_t out_len);

/*
 Mass leaving the truncated system per unit time at state `n`.

 # Safety
 `sys` must be a live handle; `n` must point to `len` doubles; `flux` to one double.
 */
enum SmolpodStatus smolpod_system_mass_flux_out(const struct SmolpodSystem *sys,
                                                const double *n,
                                                size_t len,
                                                double *flux);

/*
 Integrates from `t0` to `t1` with the explicit midpoint rule, replacing
 `state` with the final state. On divergence `state` holds the last finite state.

 # Safety
 `sys` must be a live handle; `state` must point to `len` writable doubles.
 */
enum SmolpodStatus smolpod_system_integrate(struct SmolpodSystem *sys,
                                            double *state,
                                            size_t len,
                                            double t0,
                                            double t1,
                                            double dt);

/*
 Builds a basis with the greedy windowed algorithm starting from `n0` at `t = 0`.
 `terminated` is set to 1 when the `eps` criterion stopped the search.

 # Safety
 `sys` must be a live handle; `n0` must point to `len` doubles; `out`,
 `t_basis` and `terminated` must be valid for writes.
 */
enum SmolpodStatus smolpod_basis_build_greedy(struct SmolpodSystem *sys,
                                              const double *n0,
                                              size_t len,
                                              double tau,
                                              size_t snapshots,
                                              double eps,
                                              double eps_prime,
                                              double delta,
                                              size_t max_windows,
                                              double dt,
                                              struct SmolpodBasis **out,
                                              double *t_basis,
                                              int32_t *terminated);

/*
 Wraps a row-major `dim × rank` matrix with orthonormal columns.

 # Safety
 `data` must point to `dim * rank` doubles; `out` must be valid for writes.
 */
enum SmolpodStatus smolpod_basis_from_rows(size_t dim,
                                           size_t rank,
                                           const double *data,
                                           struct SmolpodBasis **out);

/*
 Reads a basis from a PODMAT1 file.

 # Safety
 `file` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum SmolpodStatus smolpod_basis_load(const char *file, struct SmolpodBasis **out);

/*
 Writes a basis as a PODMAT1 file.

 # Safety
 `basis` must be a live handle; `file` a NUL-terminated string.
 */
enum SmolpodStatus smolpod_basis_save(const struct SmolpodBasis *basis, const char *file);

/*
 # Safety
 `basis` must be null or a live handle.
 */
size_t smolpod_basis_dim(const struct SmolpodBasis *basis);

/*
 # Safety
 `basis` must be null or a live handle.
 */
size_t smolpod_basis_rank(const struct SmolpodBasis *basis);

/*
 # Safety
 `basis` must be null or a handle from this library not yet freed.
 */
void smolpod_basis_free(struct SmolpodBasis *basis);

/*
 `x = Vᵀ n`.

 # Safety
 `basis` must be a live handle; `n` and `x` must point to `n_len`/`x_len` doubles.
 */
enum SmolpodStatus smolpod_basis_project(const struct SmolpodBasis *basis,
                                         const double *n,
                                         size_t n_len,
                                         double *x,
                                         size_t x_len);

/*
 `n = V x`.

 # Safety
 `basis` must be a live handle; `x` and `n` must point to `x_len`/`n_len` doubles.
 */
enum SmolpodStatus smolpod_basis_lift(const struct SmolpodBasis *basis,
                                      const double *x,
                                      size_t x_len,
                                      double *n,
                                      size_t n_len);

/*
 Projects the system onto `basis`: `J̃ = Vᵀ J` and the reduced tensor.

 # Safety
 `sys` and `basis` must be live handles; `out` must be valid for writes.
 */
enum SmolpodStatus smolpod_reduced_build(const struct SmolpodSystem *sys,
                                         const struct SmolpodBasis *basis,
                                         struct SmolpodReduced **out);

/*
 # Safety
 `red` must be null or a live handle.
 */
size_t smolpod_reduced_rank(const struct SmolpodReduced *red);

/*
 Writes `dx/dt` at `x` into `out`; both have length `R`.

 # Safety
 `red` must be a live handle; `x` and `out` must point to `len`/`out_len` doubles.
 */
enum SmolpodStatus smolpod_reduced_rhs(const struct SmolpodReduced *red,
                                       const double *x,
                                       size_t len,
                                       double *out,
                                       size_t out_len);

/*
 Integrates the reduced system from `t0` to `t1`, replacing `x` with the final state.

 # Safety
 `red` must be a live handle; `x` must point to `len` writable doubles.
 */
enum SmolpodStatus smolpod_reduced_solve(const struct SmolpodReduced *red,
                                         double *x,
                                         size_t len,
                                         double t0,
                                         double t1,
                                         double dt);

/*
 # Safety
 `red` must be null or a handle from this library not yet freed.
 */
void smolpod_reduced_free(struct SmolpodReduced *red);

/*
 Writes a row-major `rows × cols` matrix as a PODMAT1 file.

 # Safety
 `file` must be a NUL-terminated string; `data` must point to `rows * cols` doubles.
 */
enum SmolpodStatus smolpod_podmat_write(const char *file,
                                        size_t rows,
                                        size_t cols,
                                        const double *data);

/*
 Reads the dimensions of a PODMAT1 file and, when `data` is non-null and
 `capacity ≥ rows * cols`, its row-major payload.

 # Safety
 `file` must be a NUL-terminated string; `rows`/`cols` valid for writes;
 `data` null or pointing to `capacity` writable doubles.
 */
enum SmolpodStatus smolpod_podmat_read(const char *file,
                                       size_t *rows,
                                       size_t *cols,
                                       double *data,
                                       size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMOLPOD_H */
