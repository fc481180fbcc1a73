#ifndef RETSEG_H
#define RETSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RetsegStatus {
  RETSEG_STATUS_OK = 0,
  RETSEG_STATUS_NULL_POINTER = 1,
  RETSEG_STATUS_INVALID_ARGUMENT = 2,
  RETSEG_STATUS_CONFIG = 3,
  RETSEG_STATUS_DATA = 4,
  RETSEG_STATUS_NUMERIC = 5,
  RETSEG_STATUS_IO = 6,
  RETSEG_STATUS_PANIC = 7,
} RetsegStatus;

typedef struct RetsegGrid RetsegGrid;

typedef struct RetsegModel RetsegModel;

typedef struct RetsegProbMap RetsegProbMap;

/**
 * One grid cell in subarea coordinates.
 */
typedef struct RetsegCell {
  size_t x;
  size_t y;
  size_t side;
} RetsegCell;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty when none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *retseg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *retseg_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum RetsegStatus retseg_grid_new(size_t subarea_size, uint32_t level, struct RetsegGrid **out);

/**
 * # Safety
 * `grid` must be null or a handle from [`retseg_grid_new`] not yet freed.
 */
void retseg_grid_free(struct RetsegGrid *grid);

/**
 * Number of cells, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live grid handle.
 */
size_t retseg_grid_cell_count(const struct RetsegGrid *grid);

/**
 * # Safety
 * `grid` must be a live grid handle and `out` writable.
 */
enum RetsegStatus retseg_grid_cell(const struct RetsegGrid *grid,
                                   size_t index,
                                   struct RetsegCell *out);

/**
 * # Safety
 * `grid` must be a live grid handle and `out` writable.
 */
enum RetsegStatus retseg_grid_cell_of_pixel(const struct RetsegGrid *grid,
                                            size_t x,
                                            size_t y,
                                            size_t *out);

/**
 * Encodes the `d x d` window at `(x0, y0)` of a `width x height` label
 * image into per-cell pmfs. `ambiguous` may be null. `probs_out` receives
 * `cells * classes` values and `masked_out` (nullable) one flag per cell.
 *
 * # Safety
 * Every non-null pointer must reference at least the stated number of elements.
 */
enum RetsegStatus retseg_grid_encode_window(const struct RetsegGrid *grid,
                                            const uint8_t *labels,
                                            const uint8_t *ambiguous,
                                            size_t width,
                                            size_t height,
                                            size_t x0,
                                            size_t y0,
                                            size_t classes,
                                            double *probs_out,
                                            uint8_t *masked_out);

/**
 * Step to the next fixation for mean cell entropy `entropy`.
 *
 * # Safety
 * `out` must be writable.
 */
enum RetsegStatus retseg_attention_step(double entropy,
                                        size_t subarea_size,
                                        double sigma,
                                        size_t min_step,
                                        size_t *out);

/**
 * Mean entropy (natural log) over the unmasked cells of a pmf grid.
 *
 * # Safety
 * `probs` must hold `cells * classes` values, `masked` null or `cells`
 * flags, and `out` be writable.
 */
enum RetsegStatus retseg_grid_entropy(const double *probs,
                                      const uint8_t *masked,
                                      size_t cells,
                                      size_t classes,
                                      double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum RetsegStatus retseg_probmap_new(size_t width,
                                     size_t height,
                                     size_t classes,
                                     struct RetsegProbMap **out);

/**
 * # Safety
 * `map` must be null or a live probability-map handle.
 */
void retseg_probmap_free(struct RetsegProbMap *map);

/**
 * Deposits the grid prediction of the fixation at `(x, y)`.
 *
 * # Safety
 * Handles must be live; `probs` must hold `cells * classes` values where
 * `cells` is the grid's cell count; `masked` null or one flag per cell.
 */
enum RetsegStatus retseg_probmap_deposit(struct RetsegProbMap *map,
                                         const struct RetsegGrid *grid,
                                         size_t x,
                                         size_t y,
                                         const double *probs,
                                         const uint8_t *masked);

/**
 * Writes the argmax class (255 for uncovered pixels) and overlap count of
 * every pixel, row-major. Either output may be null; `len` must equal
 * `width * height`.
 *
 * # Safety
 * `map` must be live and non-null outputs hold `len` elements.
 */
enum RetsegStatus retseg_probmap_finalize(const struct RetsegProbMap *map,
                                          uint8_t *classes_out,
                                          uint32_t *heat_out,
                                          size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum RetsegStatus retseg_model_load(const char *path, struct RetsegModel **out);

/**
 * # Safety
 * `model` must be null or a live model handle.
 */
void retseg_model_free(struct RetsegModel *model);

/**
 * Subarea side `d` the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t retseg_model_input_size(const struct RetsegModel *model);

/**
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t retseg_model_channels(const struct RetsegModel *model);

/**
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t retseg_model_classes(const struct RetsegModel *model);

/**
 * Output cells: the grid cell count, or 1 for a patch-center model.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t retseg_model_cells(const struct RetsegModel *model);

/**
 * Predicts per-cell pmfs for one planar `channels x d x d` patch in `[0, 1]`.
 * `probs_out` receives `cells * classes` values.
 *
 * # Safety
 * `model` must be live; `patch` holds `patch_len` values and `probs_out`
 * `out_len` writable values.
 */
enum RetsegStatus retseg_model_predict(const struct RetsegModel *model,
                                       const double *patch,
                                       size_t patch_len,
                                       double *probs_out,
                                       size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RETSEG_H */
