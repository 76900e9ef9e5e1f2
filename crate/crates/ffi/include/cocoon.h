#ifndef COCOON_H
#define COCOON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CocoonShuffleStatus {
  COCOON_SHUFFLE_STATUS_UNIFORM = 0,
  COCOON_SHUFFLE_STATUS_FALLBACK = 1,
  COCOON_SHUFFLE_STATUS_INFEASIBLE = 2,
} CocoonShuffleStatus;

typedef enum CocoonStatus {
  COCOON_STATUS_OK = 0,
  COCOON_STATUS_NULL_POINTER = 1,
  COCOON_STATUS_INVALID_UTF8 = 2,
  COCOON_STATUS_INVALID_ARGUMENT = 3,
  COCOON_STATUS_IO = 4,
  COCOON_STATUS_PARSE = 5,
  COCOON_STATUS_MISSING_ARTIFACT = 6,
  COCOON_STATUS_DEGENERATE = 7,
  COCOON_STATUS_TRAINING = 8,
  COCOON_STATUS_BUFFER_TOO_SMALL = 9,
  COCOON_STATUS_PANIC = 10,
} CocoonStatus;

// Opaque handle to a loaded embedding space.
typedef struct CocoonSpace CocoonSpace;

typedef struct CocoonTTest {
  double t;
  size_t df;
  double p;
} CocoonTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *cocoon_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void cocoon_string_free(char *s);

// Loads a space written by the `train` stage. When `normalize` is nonzero
// every vector is scaled to unit length.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CocoonStatus cocoon_space_load(const char *path, int normalize, struct CocoonSpace **out);

// Releases a space. NULL is ignored.
//
// # Safety
// `space` must come from [`cocoon_space_load`] and not have been freed.
void cocoon_space_free(struct CocoonSpace *space);

// Vector length, or 0 for NULL.
//
// # Safety
// `space` must be NULL or a live handle.
size_t cocoon_space_dim(const struct CocoonSpace *space);

// Number of item vectors, or 0 for NULL.
//
// # Safety
// `space` must be NULL or a live handle.
size_t cocoon_space_item_count(const struct CocoonSpace *space);

// Number of user vectors, or 0 for NULL.
//
// # Safety
// `space` must be NULL or a live handle.
size_t cocoon_space_user_count(const struct CocoonSpace *space);

// Copies a user's vector into `out`, which holds `len` doubles.
//
// # Safety
// `space` must be a live handle, `user_id` NUL-terminated and `out` valid
// for `len` writes.
enum CocoonStatus cocoon_space_user_vector(const struct CocoonSpace *space,
                                           const char *user_id,
                                           double *out,
                                           size_t len);

// Copies an item's vector into `out`, which holds `len` doubles.
//
// # Safety
// As for [`cocoon_space_user_vector`].
enum CocoonStatus cocoon_space_item_vector(const struct CocoonSpace *space,
                                           const char *item_id,
                                           double *out,
                                           size_t len);

// The `k` items most cosine-similar to `item_id`, as a JSON array of
// `[id, similarity]` pairs. Free the result with [`cocoon_string_free`].
//
// # Safety
// `space` must be a live handle, `item_id` NUL-terminated and `out` valid.
enum CocoonStatus cocoon_space_nearest_items_json(const struct CocoonSpace *space,
                                                  const char *item_id,
                                                  size_t k,
                                                  char **out);

// Radius of gyration of `n_positions` row-major vectors of length `dim`
// around `center`.
//
// # Safety
// `positions` must hold `n_positions * dim` doubles, `center` `dim`
// doubles, and `out` must be valid.
enum CocoonStatus cocoon_radius_of_gyration(const double *positions,
                                            size_t n_positions,
                                            size_t dim,
                                            const double *center,
                                            double *out);

// Normalized distance to entertainment from the item-distance extremes.
// `out_degenerate` is set to 1 when the all-item span is zero.
//
// # Safety
// Both out-pointers must be valid.
enum CocoonStatus cocoon_distance_to_entertainment(double ent_min,
                                                   double ent_max,
                                                   double all_min,
                                                   double all_max,
                                                   double *out_value,
                                                   int *out_degenerate);

// Shuffles `items` in place so that no two neighbors are equal. Infeasible
// inputs are left untouched and reported through `out_status`.
//
// # Safety
// `items` must be valid for `len` reads and writes; `out_status` valid.
enum CocoonStatus cocoon_constrained_shuffle(uint32_t *items,
                                             size_t len,
                                             uint64_t seed,
                                             enum CocoonShuffleStatus *out_status);

// Paired two-sided t test on `a[i] − b[i]`.
//
// # Safety
// `a` and `b` must each hold `n` doubles; `out` must be valid.
enum CocoonStatus cocoon_paired_t_test(const double *a,
                                       const double *b,
                                       size_t n,
                                       struct CocoonTTest *out);

// Two-sided tail probability of Student's t with `df` degrees of freedom.
//
// # Safety
// `out` must be valid.
enum CocoonStatus cocoon_t_tail_p(double t, double df, double *out);

// Runs one pipeline stage (`synth`, `ingest`, `train`, `metrics`, `null`,
// `test`, `regress` or `report`). `config_path` and `output_dir` may be
// NULL; a non-NULL `output_dir` overrides the config file.
//
// # Safety
// Non-NULL arguments must be NUL-terminated strings.
enum CocoonStatus cocoon_run(const char *stage, const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COCOON_H */
