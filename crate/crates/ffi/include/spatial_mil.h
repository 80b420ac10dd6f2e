#ifndef SPATIAL_MIL_H
#define SPATIAL_MIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_INVALID_INPUT = 1,
  SM_STATUS_CONFIG = 2,
  SM_STATUS_NUMERIC = 3,
  SM_STATUS_UNDEFINED_METRIC = 4,
  SM_STATUS_FORMAT = 5,
  SM_STATUS_IO = 6,
  SM_STATUS_GENERATION = 7,
  SM_STATUS_NULL_POINTER = 8,
  SM_STATUS_PANIC = 9,
} SmStatus;

/**
 * Opaque slide bag.
 */
typedef struct SmBag SmBag;

/**
 * Opaque trained model.
 */
typedef struct SmModel SmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next `sm_*` call on the same thread.
 */
const char *sm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sm_version(void);

/**
 * Peripheral distance of a tile whose top-left corner is `(x, y)` on a
 * `width` x `height` slide.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum SmStatus sm_peripheral_distance(uint64_t x,
                                     uint64_t y,
                                     uint64_t width,
                                     uint64_t height,
                                     double *out);

/**
 * Reads an `MSIB` bag file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SmStatus sm_bag_read(const char *path, struct SmBag **out);

/**
 * Writes a bag as an `MSIB` file.
 *
 * # Safety
 * `bag` must come from this library; `path` must be NUL-terminated.
 */
enum SmStatus sm_bag_write(const struct SmBag *bag, const char *path);

/**
 * Number of tiles, or 0 for a null handle.
 *
 * # Safety
 * `bag` must be null or come from this library.
 */
size_t sm_bag_n_tiles(const struct SmBag *bag);

/**
 * Feature width, or 0 for a null handle.
 *
 * # Safety
 * `bag` must be null or come from this library.
 */
size_t sm_bag_feature_dim(const struct SmBag *bag);

/**
 * New bag with peripheral distance and/or neighbourhood scalars appended
 * (radius 0.10, epsilon 1e-6).
 *
 * # Safety
 * `bag` must come from this library; `out` must be a valid pointer.
 */
enum SmStatus sm_bag_augment(const struct SmBag *bag,
                             bool use_pd,
                             bool use_lin,
                             struct SmBag **out);

/**
 * Releases a bag. Null is ignored.
 *
 * # Safety
 * `bag` must be null or come from this library and not be used again.
 */
void sm_bag_free(struct SmBag *bag);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be a valid pointer.
 */
enum SmStatus sm_model_load(const char *path, struct SmModel **out);

/**
 * Input width expected by the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t sm_model_input_dim(const struct SmModel *model);

/**
 * Scores a bag. Writes the MSI, MSS and hypermutation logits to
 * `logits[0..3]` and, when `attention` is non-null, the per-tile attention
 * to `attention[0..attention_len]`; `attention_len` must then equal the
 * bag's tile count.
 *
 * # Safety
 * Handles must come from this library; `logits` must hold 3 doubles and
 * `attention` (if non-null) `attention_len` doubles.
 */
enum SmStatus sm_model_forward(const struct SmModel *model,
                               const struct SmBag *bag,
                               double *logits,
                               double *attention,
                               size_t attention_len);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from this library and not be used again.
 */
void sm_model_free(struct SmModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPATIAL_MIL_H */
