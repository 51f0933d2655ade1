#ifndef GSVIDEO_H
#define GSVIDEO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `GSV_STATUS_OK` is zero; everything else is an error.
 */
typedef enum GsvStatus {
  GSV_STATUS_OK = 0,
  GSV_STATUS_NULL_POINTER = 1,
  GSV_STATUS_INVALID_ARGUMENT = 2,
  GSV_STATUS_IO = 3,
  GSV_STATUS_BAD_MAGIC = 4,
  GSV_STATUS_VERSION_MISMATCH = 5,
  GSV_STATUS_TRUNCATED = 6,
  GSV_STATUS_CHECKSUM_MISMATCH = 7,
  GSV_STATUS_CORRUPT = 8,
  GSV_STATUS_BUFFER_TOO_SMALL = 9,
  GSV_STATUS_FRAME_OUT_OF_RANGE = 10,
  GSV_STATUS_INTERNAL = 11,
} GsvStatus;

/**
 * Opaque decoder handle.
 */
typedef struct GsvModel GsvModel;

/**
 * Summary of an open model.
 */
typedef struct GsvModelInfo {
  uint32_t width;
  uint32_t height;
  uint32_t num_frames;
  uint32_t num_gaussians;
  uint64_t num_params;
  uint64_t stream_bytes;
  double bpp;
} GsvModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens a `.gsv` file. On success `*out` receives a handle to release with
 * [`gsv_model_free`]; on failure it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GsvStatus gsv_model_open(const char *path, struct GsvModel **out);

/**
 * Parses an in-memory bitstream; the bytes are not retained.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be valid.
 */
enum GsvStatus gsv_model_from_bytes(const uint8_t *data, size_t len, struct GsvModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void gsv_model_free(struct GsvModel *model);

/**
 * # Safety
 * `model` must be a live handle and `info` a valid pointer.
 */
enum GsvStatus gsv_model_info(const struct GsvModel *model, struct GsvModelInfo *info);

/**
 * Renders frame `frame` as 8-bit RGB, row-major, into `out`, which must
 * hold at least `width * height * 3` bytes. Values are clamped and rounded
 * exactly as the `decode` command writes PNGs.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `out_len` writable bytes.
 */
enum GsvStatus gsv_model_render_frame(const struct GsvModel *model,
                                      uint32_t frame,
                                      uint8_t *out,
                                      size_t out_len);

/**
 * Like [`gsv_model_render_frame`] but writes the unclamped float image.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `out_len` writable floats.
 */
enum GsvStatus gsv_model_render_frame_f32(const struct GsvModel *model,
                                          uint32_t frame,
                                          float *out,
                                          size_t out_len);

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *gsv_last_error_message(void);

/**
 * `8 * stream_bytes / (frames * height * width)`; zero if any dimension is zero.
 */
double gsv_compute_bpp(uint64_t stream_bytes, uint32_t frames, uint32_t height, uint32_t width);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gsv_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSVIDEO_H */
