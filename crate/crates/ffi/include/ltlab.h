#ifndef LTLAB_H
#define LTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LtStatus {
  LT_STATUS_OK = 0,
  LT_STATUS_NULL_POINTER = 1,
  LT_STATUS_INVALID_ARGUMENT = 2,
  LT_STATUS_SHAPE = 3,
  LT_STATUS_FORMAT = 4,
  LT_STATUS_VERSION = 5,
  LT_STATUS_IO = 6,
  LT_STATUS_NUMERIC = 7,
  LT_STATUS_BUFFER_TOO_SMALL = 8,
  LT_STATUS_PANIC = 9,
  LT_STATUS_OTHER = 10,
} LtStatus;

/**
 * One binary mask per prunable kernel.
 */
typedef struct LtMask LtMask;

/**
 * Untrained or trained weights of one of the named architectures.
 */
typedef struct LtNetwork LtNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ltlab_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into the library on the same thread.
 */
const char *ltlab_last_error_message(void);

/**
 * Glorot-normal network named `arch` (`fc`, `conv2`, `conv4`, `conv6`) from `seed`.
 *
 * # Safety
 * `arch` must be a NUL-terminated string; `out` must be writable.
 */
enum LtStatus ltlab_network_new(const char *arch, uint64_t seed, struct LtNetwork **out);

/**
 * Release a network. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void ltlab_network_free(struct LtNetwork *net);

/**
 * Deep copy of a network.
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum LtStatus ltlab_network_clone(const struct LtNetwork *net, struct LtNetwork **out);

/**
 * Number of prunable kernels.
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum LtStatus ltlab_network_num_layers(const struct LtNetwork *net, size_t *out);

/**
 * Number of weights in kernel `layer`.
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum LtStatus ltlab_network_layer_len(const struct LtNetwork *net, size_t layer, size_t *out);

/**
 * Copy kernel `layer` into `buf`, which must hold exactly the layer length.
 *
 * # Safety
 * `buf` must point to `len` writable floats.
 */
enum LtStatus ltlab_network_get_kernel(const struct LtNetwork *net,
                                       size_t layer,
                                       float *buf,
                                       size_t len);

/**
 * Overwrite kernel `layer` from `buf`, which must hold exactly the layer length.
 *
 * # Safety
 * `buf` must point to `len` readable floats.
 */
enum LtStatus ltlab_network_set_kernel(struct LtNetwork *net,
                                       size_t layer,
                                       const float *buf,
                                       size_t len);

/**
 * Score of one weight under the named criterion.
 *
 * # Safety
 * `criterion` must be a NUL-terminated string; `out` must be writable.
 */
enum LtStatus ltlab_score_pair(const char *criterion,
                               double wi,
                               double wf,
                               double alpha,
                               double *out);

/**
 * Mask keeping `fraction` of every kernel, ranked by `criterion` over the
 * pair (`initial`, `last`). Ties are broken with a stream seeded by `tie_seed`.
 *
 * # Safety
 * Handles must be live; strings NUL-terminated; `out` writable.
 */
enum LtStatus ltlab_mask_one_shot(const struct LtNetwork *initial,
                                  const struct LtNetwork *last,
                                  const char *criterion,
                                  double fraction,
                                  uint64_t tie_seed,
                                  struct LtMask **out);

/**
 * Release a mask. Null is ignored.
 *
 * # Safety
 * `mask` must come from this library and not be used afterwards.
 */
void ltlab_mask_free(struct LtMask *mask);

/**
 * Kept and total weight counts of mask layer `layer`.
 *
 * # Safety
 * `mask` must be a live handle; outputs writable.
 */
enum LtStatus ltlab_mask_layer_counts(const struct LtMask *mask,
                                      size_t layer,
                                      size_t *out_ones,
                                      size_t *out_len);

/**
 * Fraction of all masked weights that are kept.
 *
 * # Safety
 * `mask` must be a live handle; `out` writable.
 */
enum LtStatus ltlab_mask_remaining_fraction(const struct LtMask *mask, double *out);

/**
 * Write mask layer `layer` as one byte (0 or 1) per weight.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum LtStatus ltlab_mask_get_layer(const struct LtMask *mask,
                                   size_t layer,
                                   uint8_t *buf,
                                   size_t len);

/**
 * Serialize `mask` with the init seed and treatment into a Supermask pack.
 * With `buf` null only the size is written to `out_len`; otherwise `cap`
 * must be at least that size.
 *
 * # Safety
 * `buf`, when non-null, must point to `cap` writable bytes.
 */
enum LtStatus ltlab_pack_encode(const char *arch,
                                uint64_t seed,
                                const char *treatment,
                                const struct LtMask *mask,
                                uint8_t *buf,
                                size_t cap,
                                size_t *out_len);

/**
 * Decode a Supermask pack into its weights (treatment applied) and mask.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; outputs writable.
 */
enum LtStatus ltlab_pack_decode(const uint8_t *bytes,
                                size_t len,
                                struct LtNetwork **out_net,
                                struct LtMask **out_mask);

/**
 * Accuracy (and optionally mean loss) of `net` masked by `mask` on `n`
 * flat `[0, 1]` images. A null `mask` keeps every weight.
 *
 * # Safety
 * `images` must hold `n` times the input size floats, `labels` `n` bytes;
 * `out_loss` may be null.
 */
enum LtStatus ltlab_evaluate(const struct LtNetwork *net,
                             const struct LtMask *mask,
                             const float *images,
                             const uint8_t *labels,
                             size_t n,
                             double *out_accuracy,
                             double *out_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LTLAB_H */
