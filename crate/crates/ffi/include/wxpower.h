#ifndef WXPOWER_H
#define WXPOWER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WxStatus {
  WX_STATUS_OK = 0,
  WX_STATUS_NULL_POINTER = 1,
  WX_STATUS_CONFIG = 2,
  WX_STATUS_DATA = 3,
  WX_STATUS_NUMERIC = 4,
  WX_STATUS_SHAPE = 5,
  WX_STATUS_IO = 6,
  WX_STATUS_PANIC = 7,
} WxStatus;

typedef enum WxFamily {
  WX_FAMILY_LINEAR = 0,
  WX_FAMILY_RESNET = 1,
} WxFamily;

typedef enum WxSource {
  WX_SOURCE_SOLAR = 0,
  WX_SOURCE_WIND = 1,
} WxSource;

// Opaque model handle.
typedef struct WxModel WxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next failing call on the same thread.
const char *wx_last_error(void);

// Library version as a static NUL-terminated string.
const char *wx_version(void);

// Builds a freshly initialized model with the preset layer plan of
// `family`, for `channels` (6 or 30) input channels on a `height`×`width`
// grid.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum WxStatus wx_model_build(enum WxFamily family,
                             uint32_t channels,
                             uint32_t height,
                             uint32_t width,
                             uint64_t seed,
                             struct WxModel **out);

// Builds a model from the canonical `key=value` architecture text stored
// in checkpoints.
//
// # Safety
// `spec` must be a NUL-terminated string; `out` a valid handle slot.
enum WxStatus wx_model_build_from_spec(const char *spec, uint64_t seed, struct WxModel **out);

// # Safety
// `path` must be NUL-terminated; `out` a valid handle slot.
enum WxStatus wx_model_load(const char *path, struct WxModel **out);

// # Safety
// `model` must be a live handle; `path` NUL-terminated.
enum WxStatus wx_model_save(const struct WxModel *model, const char *path);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void wx_model_free(struct WxModel *model);

// Trainable parameter count; 0 for NULL.
//
// # Safety
// `model` must be a live handle or NULL.
uint64_t wx_model_param_count(const struct WxModel *model);

// Writes the expected C, H, W of one input.
//
// # Safety
// `model` live; the three out-pointers valid.
enum WxStatus wx_model_input_shape(const struct WxModel *model,
                                   uint32_t *channels,
                                   uint32_t *height,
                                   uint32_t *width);

// Eval-mode estimates for `batch` inputs. `output` receives `batch`×2
// floats: solar then wind MW per sample.
//
// # Safety
// `input` must hold `batch`·C·H·W floats and `output` room for `batch`·2.
enum WxStatus wx_model_predict(const struct WxModel *model,
                               const float *input,
                               size_t batch,
                               float *output);

// Saliency map of one input (C·H·W floats) for one output, written as
// H·W non-negative floats.
//
// # Safety
// `input` must hold C·H·W floats and `output` room for H·W.
enum WxStatus wx_model_saliency(const struct WxModel *model,
                                const float *input,
                                enum WxSource source,
                                float *output);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WXPOWER_H */
