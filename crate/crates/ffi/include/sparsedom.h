#ifndef SPARSEDOM_H
#define SPARSEDOM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  SD_STATUS_INVALID = 2,
  SD_STATUS_ABORTED = 3,
  SD_STATUS_PANIC = 4,
} SdStatus;

/**
 * Grid function on `2^m` (d = 1) or `2^m × 2^m` (d = 2) unit cells.
 */
typedef struct SdGrid SdGrid;

/**
 * Truncated kernel family.
 */
typedef struct SdKernel SdKernel;

/**
 * Sparse collection produced by the sparsifier.
 */
typedef struct SdSparse SdSparse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *sd_last_error_message(void);

/**
 * Copies `len = 2^{m·dim}` row-major values into a new grid.
 */
enum SdStatus sd_grid_new(size_t dim,
                          uint32_t m,
                          const double *values,
                          size_t len,
                          struct SdGrid **out);

void sd_grid_free(struct SdGrid *g);

/**
 * Number of cells, or 0 for a null handle.
 */
size_t sd_grid_len(const struct SdGrid *g);

/**
 * Copies the values into `out`, which must hold `len` ≥ the grid length.
 */
enum SdStatus sd_grid_values(const struct SdGrid *g, double *out, size_t len);

enum SdStatus sd_lp_norm(const struct SdGrid *g, double p, double *out);

/**
 * Centered cube maximal function `M_p g` as a new grid.
 */
enum SdStatus sd_maximal(const struct SdGrid *g, double p, struct SdGrid **out);

/**
 * Kernel of a named preset ("dini-hilbert", "rough-l2", "br-critical") on
 * grids of exponent `m`.
 */
enum SdStatus sd_kernel_preset(const char *name, uint32_t m, struct SdKernel **out);

/**
 * Rough kernel from `n` equispaced samples of a mean-zero `Ω` (n = 2 for the
 * line, n ≥ 8 for the circle) with integrability exponent `q`.
 */
enum SdStatus sd_kernel_rough(size_t dim,
                              const double *omega,
                              size_t n,
                              double q,
                              int32_t s_lo,
                              int32_t s_hi,
                              struct SdKernel **out);

enum SdStatus sd_kernel_bochner_riesz(size_t dim,
                                      int32_t s_lo,
                                      int32_t s_hi,
                                      struct SdKernel **out);

void sd_kernel_free(struct SdKernel *k);

/**
 * `Λ_μ^ν(f₁, f₂) = Σ_{μ<s≤ν} ⟨K_s * f₁, f₂⟩`.
 */
enum SdStatus sd_lambda_trunc(const struct SdKernel *k,
                              const struct SdGrid *f1,
                              const struct SdGrid *f2,
                              int32_t mu,
                              int32_t nu,
                              double *out);

/**
 * Runs the sparsifier. `lambda ≤ 0` selects the default threshold. Returns
 * [`SdStatus::Aborted`] when every attempt failed.
 */
enum SdStatus sd_sparsify(const struct SdKernel *k,
                          const struct SdGrid *f1,
                          const struct SdGrid *f2,
                          double p1,
                          double p2,
                          double lambda,
                          uint32_t max_retries,
                          struct SdSparse **out);

void sd_sparse_free(struct SdSparse *s);

/**
 * Number of cubes, or 0 for a null handle.
 */
size_t sd_sparse_len(const struct SdSparse *s);

/**
 * Scale and corner of cube `index`.
 */
enum SdStatus sd_sparse_cube(const struct SdSparse *s,
                             size_t index,
                             int32_t *scale,
                             int64_t *corner);

/**
 * Sparseness `η = min |F_Q|/|Q|` and its value against the dilates `3Q`.
 */
enum SdStatus sd_sparse_eta(const struct SdSparse *s, double *eta, double *eta_dilated);

/**
 * `Σ_{Q} |3Q| ⟨f₁⟩_{p₁,3Q} ⟨f₂⟩_{p₂,3Q}` over the collection.
 */
enum SdStatus sd_psf(const struct SdSparse *s,
                     const struct SdGrid *f1,
                     const struct SdGrid *f2,
                     double p1,
                     double p2,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSEDOM_H */
