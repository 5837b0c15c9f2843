#ifndef PODECM_H
#define PODECM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PodecmStatus {
  PODECM_STATUS_OK = 0,
  PODECM_STATUS_NULL_POINTER = 1,
  PODECM_STATUS_INVALID_ARGUMENT = 2,
  PODECM_STATUS_IO = 3,
  PODECM_STATUS_FORMAT = 4,
  PODECM_STATUS_SOLVER = 5,
  PODECM_STATUS_PANIC = 6,
} PodecmStatus;

// Trained model together with the morphing operator of its parent mesh.
typedef struct PodecmModel PodecmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a model file and the parent mesh it was trained on.
//
// # Safety
// `model_path` and `mesh_path` must be NUL-terminated strings and `out` a
// valid pointer. On success `*out` owns a handle for [`podecm_model_free`].
enum PodecmStatus podecm_model_load(const char *model_path,
                                    const char *mesh_path,
                                    struct PodecmModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`podecm_model_load`] and not be used afterwards.
void podecm_model_free(struct PodecmModel *model);

// Number of reduced modes.
//
// # Safety
// `model` must be a live handle or null (returns 0).
size_t podecm_model_num_modes(const struct PodecmModel *model);

// Number of integration points kept by the cubature rule.
//
// # Safety
// `model` must be a live handle or null (returns 0).
size_t podecm_model_num_rule_points(const struct PodecmModel *model);

// Number of geometric parameters the model expects.
//
// # Safety
// `model` must be a live handle or null (returns 0).
size_t podecm_model_num_params(const struct PodecmModel *model);

// Sets the relative Newton tolerance used by [`podecm_model_solve`].
//
// # Safety
// `model` must be a live handle.
enum PodecmStatus podecm_model_set_tolerance(struct PodecmModel *model, double eps_rel);

// Solves a load history for one geometry.
//
// `f` holds `steps` row-major 2x2 deformation gradients (xx, xy, yx, yy);
// the first must be the identity. `p` receives the effective first
// Piola-Kirchhoff stress in the same layout.
//
// # Safety
// `mu` must point to `n_mu` doubles, `f` and `p` to `4 * steps` doubles.
enum PodecmStatus podecm_model_solve(const struct PodecmModel *model,
                                     const double *mu,
                                     size_t n_mu,
                                     const double *f,
                                     size_t steps,
                                     double *p);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must point to `len` writable bytes or be null.
size_t podecm_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PODECM_H */
