#ifndef GENBLUR_H
#define GENBLUR_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum GenblurStatus {
  GENBLUR_STATUS_OK = 0,
  GENBLUR_STATUS_NULL_ARGUMENT = 1,
  GENBLUR_STATUS_INVALID_UTF8 = 2,
  GENBLUR_STATUS_SHAPE_ERROR = 3,
  GENBLUR_STATUS_NUMERIC_ERROR = 4,
  GENBLUR_STATUS_USAGE_ERROR = 5,
  GENBLUR_STATUS_RANGE_ERROR = 6,
  GENBLUR_STATUS_MODEL_FORMAT_ERROR = 7,
  GENBLUR_STATUS_CONFIG_ERROR = 8,
  GENBLUR_STATUS_SOLVER_ERROR = 9,
  GENBLUR_STATUS_IO_ERROR = 10,
  GENBLUR_STATUS_BUFFER_TOO_SMALL = 11,
  GENBLUR_STATUS_PANIC = 12,
} GenblurStatus;

/**
 * Opaque generator model handle.
 */
typedef struct GenblurModel GenblurModel;

/**
 * Opaque solve-result handle.
 */
typedef struct GenblurResult GenblurResult;

/**
 * Alternating-descent solver parameters; see the library documentation for
 * semantics and defaults.
 */
typedef struct GenblurDdConfig {
  float gamma;
  float lambda;
  uintptr_t steps;
  float step_size;
  float decay_steps;
  uintptr_t restarts;
  uint64_t seed;
} GenblurDdConfig;

/**
 * Slack-variant solver parameters.
 */
typedef struct GenblurDdsConfig {
  float tau;
  float zeta;
  float rho;
  uintptr_t steps;
  float adam_lr;
  uintptr_t restarts;
  uint64_t seed;
  float image_init_mean;
  float image_init_std;
} GenblurDdsConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *genblur_version(void);

/**
 * Copy the last error message for this thread into `buf` (truncated to
 * `len - 1` bytes, always NUL-terminated). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (then only the
 * length is reported).
 */
uintptr_t genblur_last_error_message(char *buf, uintptr_t len);

/**
 * Load a generator model container from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum GenblurStatus genblur_model_load(const char *path, struct GenblurModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from `genblur_model_load` and not be freed twice.
 */
void genblur_model_free(struct GenblurModel *model);

/**
 * Latent dimension of the model, or 0 on null.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t genblur_model_latent_dim(const struct GenblurModel *model);

/**
 * Total element count of a decoded output, or 0 on null.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t genblur_model_output_len(const struct GenblurModel *model);

/**
 * Output shape: writes up to `cap` dimensions into `dims` and returns the
 * number of dimensions.
 *
 * # Safety
 * `model` must be live; `dims` must hold `cap` elements (or be null).
 */
uintptr_t genblur_model_output_shape(const struct GenblurModel *model,
                                     uintptr_t *dims,
                                     uintptr_t cap);

/**
 * Decode a latent vector: `z` has `z_len` elements, the output is written
 * row-major into `out` (`out_len` capacity must cover the full output).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum GenblurStatus genblur_model_decode(const struct GenblurModel *model,
                                        const float *z,
                                        uintptr_t z_len,
                                        float *out,
                                        uintptr_t out_len);

/**
 * Blind deblurring by alternating latent descent. `y` is the blurry image,
 * row-major `h x w x c` on the [0, 1] scale. A null `config` uses defaults.
 *
 * # Safety
 * Pointers must be valid; the models must outlive the call.
 */
enum GenblurStatus genblur_deblur_dd(const float *y,
                                     uintptr_t h,
                                     uintptr_t w,
                                     uintptr_t c,
                                     const struct GenblurModel *image_model,
                                     const struct GenblurModel *kernel_model,
                                     const struct GenblurDdConfig *config,
                                     struct GenblurResult **out);

/**
 * Blind deblurring with the slack objective. A null `config` uses defaults.
 *
 * # Safety
 * Pointers must be valid; the models must outlive the call.
 */
enum GenblurStatus genblur_deblur_dds(const float *y,
                                      uintptr_t h,
                                      uintptr_t w,
                                      uintptr_t c,
                                      const struct GenblurModel *image_model,
                                      const struct GenblurModel *kernel_model,
                                      const struct GenblurDdsConfig *config,
                                      struct GenblurResult **out);

/**
 * Release a result handle. Null is a no-op.
 *
 * # Safety
 * `result` must come from a deblur call and not be freed twice.
 */
void genblur_result_free(struct GenblurResult *result);

/**
 * Element count of the recovered image.
 *
 * # Safety
 * `result` must be a live handle.
 */
uintptr_t genblur_result_image_len(const struct GenblurResult *result);

/**
 * Copy the recovered image into `out`.
 *
 * # Safety
 * Pointers must be valid for the stated capacity.
 */
enum GenblurStatus genblur_result_image(const struct GenblurResult *result,
                                        float *out,
                                        uintptr_t out_len);

/**
 * Element count of the recovered (sum-normalized) kernel.
 *
 * # Safety
 * `result` must be a live handle.
 */
uintptr_t genblur_result_kernel_len(const struct GenblurResult *result);

/**
 * Copy the recovered kernel into `out`.
 *
 * # Safety
 * Pointers must be valid for the stated capacity.
 */
enum GenblurStatus genblur_result_kernel(const struct GenblurResult *result,
                                         float *out,
                                         uintptr_t out_len);

/**
 * Index of the selected restart.
 *
 * # Safety
 * `result` must be a live handle.
 */
int genblur_result_chosen_restart(const struct GenblurResult *result);

/**
 * Final data-fit loss of the selected restart.
 *
 * # Safety
 * `result` must be a live handle.
 */
float genblur_result_final_measurement(const struct GenblurResult *result);

/**
 * PSNR in dB between two images on the [0, 1] scale (same `h x w x c`
 * layout); zero MSE reports the 99 dB cap.
 *
 * # Safety
 * Both buffers must hold `h * w * c` elements.
 */
enum GenblurStatus genblur_psnr(const float *a,
                                const float *b,
                                uintptr_t h,
                                uintptr_t w,
                                uintptr_t c,
                                double *out);

/**
 * Mean local SSIM between two images (1 or 3 channels, at least 11x11).
 *
 * # Safety
 * Both buffers must hold `h * w * c` elements.
 */
enum GenblurStatus genblur_ssim(const float *a,
                                const float *b,
                                uintptr_t h,
                                uintptr_t w,
                                uintptr_t c,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENBLUR_H */
