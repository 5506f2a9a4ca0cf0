#ifndef TRILL_H
#define TRILL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum {
  TRILL_STATUS_OK = 0,
  TRILL_STATUS_NULL_ARGUMENT = 1,
  TRILL_STATUS_INVALID_ARGUMENT = 2,
  TRILL_STATUS_IO = 3,
  TRILL_STATUS_FORMAT = 4,
  TRILL_STATUS_UNKNOWN_TAP = 5,
  TRILL_STATUS_TOO_SHORT = 6,
  TRILL_STATUS_BUFFER_TOO_SMALL = 7,
  TRILL_STATUS_NUMERIC = 8,
  TRILL_STATUS_INTERNAL = 9,
} TrillStatus;

/**
 * A loaded encoder checkpoint.
 */
typedef struct TrillEncoder TrillEncoder;

/**
 * Log-mel frontend with the default configuration.
 */
typedef struct TrillFrontend TrillFrontend;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of the calling thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t trill_last_error(char *buf, uintptr_t len);

/**
 * Loads a checkpoint written by `trill train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
TrillStatus trill_encoder_load(const char *path, TrillEncoder **out);

/**
 * Releases an encoder; null is ignored.
 *
 * # Safety
 * `encoder` must come from [`trill_encoder_load`] and not be used afterwards.
 */
void trill_encoder_free(TrillEncoder *encoder);

/**
 * Width of `tap` (null means the final embedding).
 *
 * # Safety
 * `encoder` must be a live handle; `tap` null or NUL-terminated; `width` writable.
 */
TrillStatus trill_encoder_tap_width(const TrillEncoder *encoder, const char *tap, uintptr_t *width);

/**
 * Embeds one context window given band-major (`n_mels` rows of
 * `n_frames` values) log-mel features.
 *
 * # Safety
 * `window` must hold `n_mels * n_frames` values; `out` must hold `out_len`.
 */
TrillStatus trill_encoder_embed_window(const TrillEncoder *encoder,
                                       const char *tap,
                                       const double *window,
                                       uintptr_t n_mels,
                                       uintptr_t n_frames,
                                       double *out,
                                       uintptr_t out_len);

/**
 * Clip-level vector: mean of the tap embeddings over half-overlapping
 * windows of the clip. Audio at other rates is resampled to 16 kHz.
 *
 * # Safety
 * `samples` must hold `n_samples` values; `out` must hold `out_len`.
 */
TrillStatus trill_encoder_embed_clip(const TrillEncoder *encoder,
                                     const char *tap,
                                     const float *samples,
                                     uintptr_t n_samples,
                                     uint32_t sample_rate,
                                     double *out,
                                     uintptr_t out_len);

/**
 * Creates a frontend with the default configuration (64 bands, 25/10 ms).
 *
 * # Safety
 * `out` must be writable.
 */
TrillStatus trill_frontend_new(TrillFrontend **out);

/**
 * Releases a frontend; null is ignored.
 *
 * # Safety
 * `frontend` must come from [`trill_frontend_new`] and not be used afterwards.
 */
void trill_frontend_free(TrillFrontend *frontend);

/**
 * Number of mel bands per frame.
 *
 * # Safety
 * `frontend` must be a live handle or null (returns 0).
 */
uintptr_t trill_frontend_n_mels(const TrillFrontend *frontend);

/**
 * Frames produced for `n_samples` samples of 16 kHz audio.
 *
 * # Safety
 * `frontend` must be a live handle or null (returns 0).
 */
uintptr_t trill_frontend_frame_count(const TrillFrontend *frontend, uintptr_t n_samples);

/**
 * Log-mel features, frame-major (`n_frames` rows of `n_mels` values).
 * The frame count is written to `n_frames` even when the buffer is too small.
 *
 * # Safety
 * `samples` must hold `n_samples` values; `out` must hold `out_len`;
 * `n_frames` must be writable.
 */
TrillStatus trill_frontend_logmel(const TrillFrontend *frontend,
                                  const float *samples,
                                  uintptr_t n_samples,
                                  uint32_t sample_rate,
                                  double *out,
                                  uintptr_t out_len,
                                  uintptr_t *n_frames);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRILL_H */
