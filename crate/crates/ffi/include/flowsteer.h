#ifndef FLOWSTEER_H
#define FLOWSTEER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FS_STATUS_NULL = 1,
  /**
   * Bad sizes, indices, enum values or configuration.
   */
  FS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File, checkpoint or encoding failure.
   */
  FS_STATUS_IO = 3,
  /**
   * A value outside its mathematical domain, such as alpha outside [0, 1]
   * or an empty metric mask.
   */
  FS_STATUS_DOMAIN = 4,
  /**
   * The sampler produced a non-finite state.
   */
  FS_STATUS_TRAJECTORY = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  FS_STATUS_PANIC = 6,
} FsStatus;

/**
 * Corrector kinds, numbered as in [`FsCorrectorConfig::kind`].
 */
typedef enum FsCorrector {
  FS_CORRECTOR_NONE = 0,
  FS_CORRECTOR_EMPTY_PROMPT = 1,
  FS_CORRECTOR_EDIT_PROMPT = 2,
  FS_CORRECTOR_STRAIGHT_PATH = 3,
  FS_CORRECTOR_FLOWCHEF = 4,
} FsCorrector;

/**
 * Prompt identifiers.
 */
typedef enum FsPrompt {
  FS_PROMPT_EMPTY = 0,
  FS_PROMPT_TEXT_REMOVAL = 1,
  FS_PROMPT_SCREENTONE = 2,
} FsPrompt;

/**
 * Opaque velocity field handle.
 */
typedef struct FsField FsField;

/**
 * Sampler correction settings; see [`fs_corrector_default`].
 */
typedef struct FsCorrectorConfig {
  /**
   * One of the [`FsCorrector`] values.
   */
  uint32_t kind;
  /**
   * Corrected steps; must be below the grid size.
   */
  size_t m;
  /**
   * Blend strength in [0, 1].
   */
  double alpha;
  /**
   * Steering step of the flowchef kind.
   */
  double s;
  /**
   * Start index on the straight noise-to-input path; 0 starts from noise.
   */
  size_t noise_inversion_i;
  /**
   * Nonzero re-evaluates the edit velocity after each blend.
   */
  uint8_t reevaluate_v;
} FsCorrectorConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call on the same thread.
 */
const char *fs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fs_version(void);

/**
 * The default corrector: empty-prompt, M = 3, alpha = 0.01, s = 0.005.
 */
struct FsCorrectorConfig fs_corrector_default(void);

/**
 * Loads a trained checkpoint written by `flowsteer train`.
 */
enum FsStatus fs_field_load(const char *path, struct FsField **out);

/**
 * The constant field `v = u` of dimension `dim`.
 */
enum FsStatus fs_field_new_constant(const double *u, size_t dim, struct FsField **out);

/**
 * The affine field `v = A z + b` with `A` a row-major `dim x dim` matrix.
 */
enum FsStatus fs_field_new_affine(const double *a,
                                  const double *b,
                                  size_t dim,
                                  struct FsField **out);

/**
 * Releases a handle; null is ignored.
 */
void fs_field_free(struct FsField *field);

enum FsStatus fs_field_dim(const struct FsField *field, size_t *out);

/**
 * Writes `v(z, t, prompt, x_in)` into `out_v`; all buffers hold `dim` values.
 */
enum FsStatus fs_field_evaluate(const struct FsField *field,
                                const double *z,
                                double t,
                                uint32_t prompt_id,
                                const double *x_in,
                                size_t dim,
                                double *out_v);

/**
 * Runs the corrected Euler sampler on a uniform grid of `grid_n` steps from
 * the initial state `z0` and writes the final state into `out`.
 */
enum FsStatus fs_sample(const struct FsField *field,
                        const double *x_in,
                        const double *z0,
                        size_t dim,
                        uint32_t prompt_id,
                        size_t grid_n,
                        const struct FsCorrectorConfig *config,
                        double *out);

/**
 * Surrogate reconstruction loss `||x_in - (z + (t_N - t_i) u)||^2` on a
 * uniform grid of `grid_n` steps.
 */
enum FsStatus fs_surrogate_loss(const double *z,
                                const double *x_in,
                                const double *u,
                                size_t dim,
                                size_t grid_n,
                                size_t step,
                                double *out);

/**
 * PSNR in dB with peak value 1 over the pixels where `mask > 0.5`, or over
 * all pixels when `mask` is null. Identical images give +infinity.
 */
enum FsStatus fs_psnr(const double *a,
                      const double *b,
                      const double *mask,
                      size_t height,
                      size_t width,
                      double *out);

/**
 * Mean SSIM (11x11 Gaussian window, sigma 1.5) over the window centres where
 * `mask > 0.5`, or over all pixels when `mask` is null.
 */
enum FsStatus fs_ssim(const double *a,
                      const double *b,
                      const double *mask,
                      size_t height,
                      size_t width,
                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWSTEER_H */
