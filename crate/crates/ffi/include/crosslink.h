#ifndef CROSSLINK_H
#define CROSSLINK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClStatus {
  CL_STATUS_OK = 0,
  CL_STATUS_NULL_POINTER = 1,
  CL_STATUS_INVALID_ARGUMENT = 2,
  CL_STATUS_SHAPE = 3,
  CL_STATUS_FORMAT = 4,
  CL_STATUS_CHECKPOINT = 5,
  CL_STATUS_IO = 6,
  CL_STATUS_NON_FINITE = 7,
  CL_STATUS_PANIC = 8,
} ClStatus;

// Opaque handle to a loaded network.
typedef struct ClModel ClModel;

// Per-case scores. Rates are percentages; `hd` is in pixels. NaN when undefined.
typedef struct ClMetrics {
  double dsc;
  double sen;
  double spe;
  double or_;
  double ur;
  double hd;
} ClMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *cl_last_error(void);

// Library version as a static NUL-terminated string.
const char *cl_version(void);

// Loads a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ClStatus cl_model_load(const char *path, struct ClModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`cl_model_load`] and not have been freed.
void cl_model_free(struct ClModel *model);

// Variant name of a loaded model; owned by the handle.
//
// # Safety
// `model` must be a live handle or null.
const char *cl_model_variant(const struct ClModel *model);

// Base channel width of a loaded model, 0 for null.
//
// # Safety
// `model` must be a live handle or null.
size_t cl_model_base_width(const struct ClModel *model);

// Foreground probabilities for one `height×width` grayscale image in [0, 1].
// Both buffers hold `height*width` row-major values.
//
// # Safety
// `pixels` and `probs_out` must point to `height*width` floats.
enum ClStatus cl_model_predict(struct ClModel *model,
                               const float *pixels,
                               size_t height,
                               size_t width,
                               float *probs_out);

// Scores a predicted mask against ground truth (nonzero bytes are foreground).
//
// # Safety
// `prediction` and `ground_truth` must point to `height*width` bytes; `out` must be writable.
enum ClStatus cl_mask_metrics(const uint8_t *prediction,
                              const uint8_t *ground_truth,
                              size_t height,
                              size_t width,
                              struct ClMetrics *out);

// Attention loss of one image: vertical map, horizontal map and mask, all
// `height*width` row-major. Writes 0 when any input is constant.
//
// # Safety
// The three inputs must point to `height*width` doubles; `out` must be writable.
enum ClStatus cl_attention_loss(const double *vertical,
                                const double *horizontal,
                                const double *mask,
                                size_t height,
                                size_t width,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSLINK_H */
