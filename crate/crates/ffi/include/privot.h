#ifndef PRIVOT_H
#define PRIVOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define PRIVOT_OK 0

#define PRIVOT_ERR_NULL 1

#define PRIVOT_ERR_INVALID 2

#define PRIVOT_ERR_DIMENSION 3

#define PRIVOT_ERR_GRID 4

#define PRIVOT_ERR_IO 5

#define PRIVOT_ERR_BUFFER 6

#define PRIVOT_ERR_PANIC 7

// Paired source and target samples clipped to a grid.
typedef struct PrivotDataset PrivotDataset;

// Candidate potentials sharing one grid.
typedef struct PrivotFamily PrivotFamily;

// Outcome of a fit: the selected index and its gradient map.
typedef struct PrivotFit PrivotFit;

// Uniform grid over a box.
typedef struct PrivotGrid PrivotGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *privot_last_error(void);

// Library version as a static NUL-terminated string.
const char *privot_version(void);

// Grid with `m` points per axis on the box `[lo[a], hi[a]]`, `a < d`.
// Requires: `lo` and `hi` point to `d` doubles; `out` is writable.
int privot_grid_new(const double *lo,
                    const double *hi,
                    uintptr_t d,
                    uintptr_t m,
                    struct PrivotGrid **out);

// Number of grid points.
// Requires: `grid` is a live handle or NULL (which yields 0).
uintptr_t privot_grid_len(const struct PrivotGrid *grid);

// Dimension of the grid's box.
// Requires: `grid` is a live handle or NULL (which yields 0).
uintptr_t privot_grid_dim(const struct PrivotGrid *grid);

// Requires: `grid` came from `privot_grid_new` and is not used afterwards; NULL is ignored.
void privot_grid_free(struct PrivotGrid *grid);

// Dataset from `n` point-major source and target points of the grid's dimension.
// Requires: `x` and `y` point to `n * dim` doubles; `out` is writable.
int privot_dataset_new(const struct PrivotGrid *grid,
                       const double *x,
                       const double *y,
                       uintptr_t n,
                       struct PrivotDataset **out);

// Synthetic dataset from the default attraction/repulsion model: uniform
// source on the grid's box, target pushed forward by the map whose bump
// centers are drawn from `seed`.
// Requires: `out` is writable.
int privot_dataset_generate(const struct PrivotGrid *grid,
                            uintptr_t n,
                            uint64_t seed,
                            struct PrivotDataset **out);

// Number of sample pairs.
// Requires: `data` is a live handle or NULL (which yields 0).
uintptr_t privot_dataset_len(const struct PrivotDataset *data);

// Requires: `data` came from a `privot_dataset_*` constructor and is not used afterwards; NULL is ignored.
void privot_dataset_free(struct PrivotDataset *data);

// Family of `count` potentials given by their grid values, member-major.
// Requires: `values` points to `count * privot_grid_len(grid)` doubles; `out` is writable.
int privot_family_from_values(const struct PrivotGrid *grid,
                              const double *values,
                              uintptr_t count,
                              struct PrivotFamily **out);

// `count` attraction/repulsion potentials from the default model, all drawn
// from `seed` (no member is privileged).
// Requires: `out` is writable.
int privot_family_generate(const struct PrivotGrid *grid,
                           uintptr_t count,
                           uint64_t seed,
                           struct PrivotFamily **out);

// Number of family members.
// Requires: `family` is a live handle or NULL (which yields 0).
uintptr_t privot_family_len(const struct PrivotFamily *family);

// Requires: `family` came from a `privot_family_*` constructor and is not used afterwards; NULL is ignored.
void privot_family_free(struct PrivotFamily *family);

// ε-differentially private selection with clamping constant `clip`. Only
// the released fields are kept; scores are never exposed.
// Requires: Handles are live; `out` is writable.
int privot_fit_private(const struct PrivotDataset *data,
                       const struct PrivotFamily *family,
                       double epsilon,
                       double clip,
                       uint64_t seed,
                       struct PrivotFit **out);

// Exact minimizer of the clamped objective; not private.
// Requires: Handles are live; `out` is writable.
int privot_fit_nonprivate(const struct PrivotDataset *data,
                          const struct PrivotFamily *family,
                          double clip,
                          struct PrivotFit **out);

// Index of the selected member.
// Requires: `fit` is live; `index` is writable.
int privot_fit_chosen_index(const struct PrivotFit *fit, uintptr_t *index);

// Laplace scale used by the selection (zero when non-private).
// Requires: `fit` is live; `scale` is writable.
int privot_fit_noise_scale(const struct PrivotFit *fit, double *scale);

// Copies the fitted map, point-major with `dim` components per grid point,
// into `buf`. `len` must be at least `grid_len * dim`; the required length
// is written to `needed` when it is not NULL.
// Requires: `fit` is live; `buf` holds `len` doubles.
int privot_fit_map(const struct PrivotFit *fit, double *buf, uintptr_t len, uintptr_t *needed);

// Requires: `fit` came from a `privot_fit_*` call and is not used afterwards; NULL is ignored.
void privot_fit_free(struct PrivotFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIVOT_H */
