#ifndef SWINIR_H
#define SWINIR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every call.
typedef enum SwinirStatus {
  SWINIR_STATUS_OK = 0,
  SWINIR_STATUS_NULL_POINTER = 1,
  SWINIR_STATUS_INVALID_ARGUMENT = 2,
  SWINIR_STATUS_SHAPE = 3,
  SWINIR_STATUS_IO = 4,
  SWINIR_STATUS_FORMAT = 5,
  SWINIR_STATUS_CHECKSUM = 6,
  SWINIR_STATUS_NUMERIC = 7,
  SWINIR_STATUS_BUFFER_TOO_SMALL = 8,
  SWINIR_STATUS_PANIC = 9,
} SwinirStatus;

// Opaque model handle.
typedef struct SwinirModel SwinirModel;

// Architecture description for [`swinir_model_new`] and
// [`swinir_model_config`]. `task`: 0 sr, 1 denoise, 2 car. `upsampler`:
// 0 pixelshuffle, 1 pixelshuffledirect.
typedef struct SwinirConfig {
  uint32_t num_blocks;
  uint32_t layers_per_block;
  uint32_t window;
  uint32_t channels;
  uint32_t heads;
  uint32_t mlp_ratio;
  uint32_t task;
  uint32_t scale;
  uint32_t in_channels;
  uint32_t out_channels;
  uint32_t upsampler;
  uint32_t num_feat;
  bool block_residual;
} SwinirConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *swinir_last_error(void);

// Library version as a static NUL-terminated string.
const char *swinir_version(void);

// Loads a checkpoint file. `*out` receives a new handle.
enum SwinirStatus swinir_model_load(const char *path, struct SwinirModel **out);

// Loads a checkpoint from memory.
enum SwinirStatus swinir_model_load_bytes(const uint8_t *data,
                                          size_t len,
                                          struct SwinirModel **out);

// Freshly initialized model from `seed`.
enum SwinirStatus swinir_model_new(const struct SwinirConfig *config,
                                   uint64_t seed,
                                   struct SwinirModel **out);

// Releases a handle. Null is ignored.
void swinir_model_free(struct SwinirModel *model);

// Writes the checkpoint bytes to `buf` when `capacity` suffices; `*len`
// always receives the required size.
enum SwinirStatus swinir_model_save_bytes(const struct SwinirModel *model,
                                          uint8_t *buf,
                                          size_t capacity,
                                          size_t *len);

enum SwinirStatus swinir_model_config(const struct SwinirModel *model, struct SwinirConfig *out);

// Number of scalar parameters.
enum SwinirStatus swinir_model_param_count(const struct SwinirModel *model, uint64_t *out);

// Output extent for an input of `height × width`.
enum SwinirStatus swinir_model_output_size(const struct SwinirModel *model,
                                           size_t height,
                                           size_t width,
                                           size_t *out_height,
                                           size_t *out_width);

// Restores a float image. `output` must hold
// `out_height · out_width · out_channels` values.
enum SwinirStatus swinir_model_infer(const struct SwinirModel *model,
                                     const float *input,
                                     size_t height,
                                     size_t width,
                                     size_t channels,
                                     float *output,
                                     size_t output_len);

// Restores an 8-bit image; the result is rounded and clamped to 0..=255.
enum SwinirStatus swinir_model_infer_u8(const struct SwinirModel *model,
                                        const uint8_t *input,
                                        size_t height,
                                        size_t width,
                                        size_t channels,
                                        uint8_t *output,
                                        size_t output_len);

// PSNR in dB of two 8-bit images, ignoring `border` pixels at each edge.
// Identical images give positive infinity.
enum SwinirStatus swinir_psnr_u8(const uint8_t *a,
                                 const uint8_t *b,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 size_t border,
                                 double *out);

enum SwinirStatus swinir_ssim_u8(const uint8_t *a,
                                 const uint8_t *b,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 size_t border,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWINIR_H */
