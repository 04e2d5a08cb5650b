#ifndef FGANET_H
#define FGANET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  FGA_STATUS_OK = 0,
  FGA_STATUS_NULL_POINTER = 1,
  FGA_STATUS_INVALID_UTF8 = 2,
  FGA_STATUS_IO = 3,
  FGA_STATUS_CHECKPOINT = 4,
  FGA_STATUS_DECODE = 5,
  FGA_STATUS_INVALID_SHAPE = 6,
  FGA_STATUS_INVALID_ARGUMENT = 7,
  FGA_STATUS_UNKNOWN_TAP = 8,
  FGA_STATUS_BUFFER_TOO_SMALL = 9,
  FGA_STATUS_PANIC = 10,
  FGA_STATUS_INTERNAL = 11,
} FgaStatus;

/**
 * A loaded checkpoint. Opaque to C.
 */
typedef struct FgaModel FgaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or NULL.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *fga_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fga_version(void);

/**
 * Loads a checkpoint file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
FgaStatus fga_model_load(const char *path, FgaModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`fga_model_load`] and not be used afterwards.
 */
void fga_model_free(FgaModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
FgaStatus fga_model_num_classes(const FgaModel *model, size_t *out);

/**
 * Input height, width and channel count the model expects.
 *
 * # Safety
 * `model` must be a live handle; the three outputs writable.
 */
FgaStatus fga_model_input_shape(const FgaModel *model,
                                size_t *height,
                                size_t *width,
                                size_t *channels);

/**
 * Name of class `index`, owned by the handle.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
FgaStatus fga_model_class_name(const FgaModel *model, size_t index, const char **out);

/**
 * Classifies one preprocessed image: `pixels` is `H×W×C` row-major,
 * channels last, values in `[0, 1]`. Writes the argmax to `*class` and,
 * when `probs` is non-NULL, the class probabilities (`probs_len` must
 * cover the class count).
 *
 * # Safety
 * `pixels` must point to `pixels_len` readable values, `probs` to
 * `probs_len` writable values (or be NULL with `probs_len == 0`).
 */
FgaStatus fga_model_predict(const FgaModel *model,
                            const double *pixels,
                            size_t pixels_len,
                            double *probs,
                            size_t probs_len,
                            size_t *class_);

/**
 * Like [`fga_model_predict`], decoding and resizing an image file first
 * exactly as the command-line tool does.
 *
 * # Safety
 * See [`fga_model_predict`]; `path` must be NUL-terminated.
 */
FgaStatus fga_model_predict_file(const FgaModel *model,
                                 const char *path,
                                 double *probs,
                                 size_t probs_len,
                                 size_t *class_);

/**
 * Grad-CAM map for `class` at layer `tap` (NULL selects the default),
 * upsampled to the input size and written row-major to `out`
 * (`out_len ≥ H·W`). Values are in `[0, 1]`.
 *
 * # Safety
 * `pixels` as for [`fga_model_predict`]; `out` must point to `out_len`
 * writable values; `tap` NULL or NUL-terminated.
 */
FgaStatus fga_model_gradcam(const FgaModel *model,
                            const double *pixels,
                            size_t pixels_len,
                            size_t class_,
                            const char *tap,
                            double *out,
                            size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGANET_H */
