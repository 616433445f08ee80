#ifndef ADABLOCK_H
#define ADABLOCK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdaStatus {
  ADA_STATUS_OK = 0,
  ADA_STATUS_NULL_POINTER = 1,
  ADA_STATUS_INVALID_UTF8 = 2,
  ADA_STATUS_INVALID_ARGUMENT = 3,
  ADA_STATUS_CONFIG_ERROR = 4,
  ADA_STATUS_PREDICTOR_ERROR = 5,
  ADA_STATUS_DECODE_ERROR = 6,
  ADA_STATUS_IO_ERROR = 7,
  ADA_STATUS_PANIC = 8,
} AdaStatus;

/**
 * Opaque decode result handle.
 */
typedef struct AdaDecodeResult AdaDecodeResult;

/**
 * Opaque predictor handle. Safe to share across threads for decoding.
 */
typedef struct AdaPredictor AdaPredictor;

/**
 * Synthetic field parameters; see [`ada_synthetic_default`].
 */
typedef struct AdaSyntheticParams {
  double plateau_rate;
  double vb_width_mean;
  double vb_width_jitter;
  double floor_level;
  double vb_low;
  double vb_high;
  double plateau_level;
  size_t delimiter_period;
  uint64_t noise_seed;
} AdaSyntheticParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `ada_*` call on the same thread.
 */
const char *ada_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ada_version(void);

struct AdaSyntheticParams ada_synthetic_default(void);

/**
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage.
 */
enum AdaStatus ada_predictor_synthetic(const struct AdaSyntheticParams *params,
                                       struct AdaPredictor **out);

/**
 * Builds an n-gram predictor from corpus text. `character_mode` non-zero
 * tokenizes per character; otherwise on whitespace with newlines kept.
 * A negative `provisional_context` disables provisional context.
 *
 * # Safety
 * `corpus` must be a NUL-terminated string and `out` writable.
 */
enum AdaStatus ada_predictor_ngram(const char *corpus,
                                   size_t order,
                                   double smoothing_k,
                                   size_t max_span,
                                   int character_mode,
                                   double provisional_context,
                                   struct AdaPredictor **out);

/**
 * Loads a recorded trace file as a replay predictor.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AdaStatus ada_predictor_trace(const char *path, struct AdaPredictor **out);

/**
 * # Safety
 * `p` must come from an `ada_predictor_*` constructor and not be used
 * afterwards. Null is ignored.
 */
void ada_predictor_free(struct AdaPredictor *p);

/**
 * Number of tokens in the predictor's vocabulary.
 *
 * # Safety
 * `p` must be a live predictor handle or null.
 */
size_t ada_predictor_vocab_size(const struct AdaPredictor *p);

/**
 * Id of `token` in the predictor's vocabulary.
 *
 * # Safety
 * `p` must be a live handle, `token` a NUL-terminated string, `out` writable.
 */
enum AdaStatus ada_predictor_token_id(const struct AdaPredictor *p,
                                      const char *token,
                                      uint32_t *out);

/**
 * Decodes `prompt` under a config given in the `key = value` file format.
 * A null or empty config selects the defaults.
 *
 * # Safety
 * `p` must be a live handle, `config` null or NUL-terminated, `prompt`
 * valid for `prompt_len` reads, and `out` writable.
 */
enum AdaStatus ada_decode(const struct AdaPredictor *p,
                          const char *config,
                          const uint32_t *prompt,
                          size_t prompt_len,
                          struct AdaDecodeResult **out);

/**
 * # Safety
 * `r` must come from [`ada_decode`] and not be used afterwards. Null is
 * ignored.
 */
void ada_result_free(struct AdaDecodeResult *r);

/**
 * Denoise calls (NFE); 0 for null.
 *
 * # Safety
 * `r` must be a live result handle or null.
 */
size_t ada_result_nfe(const struct AdaDecodeResult *r);

/**
 * # Safety
 * `r` must be a live result handle or null.
 */
size_t ada_result_steps(const struct AdaDecodeResult *r);

/**
 * # Safety
 * `r` must be a live result handle or null.
 */
size_t ada_result_position_evals(const struct AdaDecodeResult *r);

/**
 * 1 when every position was decoded, 0 when the step budget ran out.
 *
 * # Safety
 * `r` must be a live result handle or null.
 */
int ada_result_completed(const struct AdaDecodeResult *r);

/**
 * # Safety
 * `r` must be a live result handle or null.
 */
size_t ada_result_block_count(const struct AdaDecodeResult *r);

/**
 * Full token sequence (prompt then generation). The pointer is owned by
 * the result and valid until it is freed.
 *
 * # Safety
 * `r` must be a live handle; `tokens` and `len` must be writable.
 */
enum AdaStatus ada_result_tokens(const struct AdaDecodeResult *r,
                                 const uint32_t **tokens,
                                 size_t *len);

/**
 * Rendered generation; release with [`ada_string_free`].
 *
 * # Safety
 * `r` must be a live result handle or null.
 */
char *ada_result_text(const struct AdaDecodeResult *r);

/**
 * Summary JSON; release with [`ada_string_free`].
 *
 * # Safety
 * `r` must be a live result handle or null.
 */
char *ada_result_summary_json(const struct AdaDecodeResult *r);

/**
 * Trace in JSONL form, header line first; release with [`ada_string_free`].
 *
 * # Safety
 * `r` must be a live result handle or null.
 */
char *ada_result_trace_jsonl(const struct AdaDecodeResult *r);

/**
 * # Safety
 * `s` must come from an `ada_*` function returning `char *`, or be null.
 */
void ada_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADABLOCK_H */
