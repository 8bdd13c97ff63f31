#ifndef MASKSPOT_H
#define MASKSPOT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of symbols in the charset, and of values per probability row.
 */
#define MS_NUM_CHARS 36

/**
 * Classes per cell in the character loss (background plus symbols).
 */
#define MS_CHAR_CLASSES 37

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_FORMAT = 3,
  MS_STATUS_IO = 4,
  MS_STATUS_CONTRACT = 5,
  MS_STATUS_INTERNAL = 6,
} MsStatus;

/**
 * Pixel-voting output: the decoded string and its probability rows.
 */
typedef struct MsDecoded MsDecoded;

/**
 * A case-folded candidate word list.
 */
typedef struct MsLexicon MsLexicon;

/**
 * A decoded `[38, H, W]` mask stack.
 */
typedef struct MsStack MsStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ms_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ms_string_free(char *s);

/**
 * Loads an MTSR stack file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum MsStatus ms_stack_load_path(const char *path, struct MsStack **out);

/**
 * Parses an MTSR stack from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum MsStatus ms_stack_load_bytes(const uint8_t *data, size_t len, struct MsStack **out);

/**
 * # Safety
 * `stack` must be null or a handle from this library, not yet freed.
 */
void ms_stack_free(struct MsStack *stack);

/**
 * Map height, or 0 for a null handle.
 *
 * # Safety
 * `stack` must be null or a live handle.
 */
size_t ms_stack_height(const struct MsStack *stack);

/**
 * Map width, or 0 for a null handle.
 *
 * # Safety
 * `stack` must be null or a live handle.
 */
size_t ms_stack_width(const struct MsStack *stack);

/**
 * Pixel voting over `stack`. Pass `bg_threshold < 0` for the default
 * (192/255). `eight_connected` selects 8-connectivity for regions.
 *
 * # Safety
 * `stack` must be a live handle; `out` must be writable.
 */
enum MsStatus ms_pixel_voting(const struct MsStack *stack,
                              double bg_threshold,
                              size_t min_region_pixels,
                              bool eight_connected,
                              struct MsDecoded **out);

/**
 * Builds a decoded word from explicit probability rows: `n_chars` rows of
 * [`MS_NUM_CHARS`] values. The text is the per-row argmax.
 *
 * # Safety
 * `probs` must point to `n_chars * MS_NUM_CHARS` readable values.
 */
enum MsStatus ms_decoded_from_probs(const double *probs, size_t n_chars, struct MsDecoded **out);

/**
 * # Safety
 * `decoded` must be null or a handle from this library, not yet freed.
 */
void ms_decoded_free(struct MsDecoded *decoded);

/**
 * Decoded text, owned by the handle. Null for a null handle.
 *
 * # Safety
 * `decoded` must be null or a live handle.
 */
const char *ms_decoded_text(const struct MsDecoded *decoded);

/**
 * Number of decoded characters, or 0 for a null handle.
 *
 * # Safety
 * `decoded` must be null or a live handle.
 */
size_t ms_decoded_len(const struct MsDecoded *decoded);

/**
 * Copies the [`MS_NUM_CHARS`] probabilities of character `position`.
 *
 * # Safety
 * `decoded` must be a live handle; `out_probs` must have room for
 * `MS_NUM_CHARS` values.
 */
enum MsStatus ms_decoded_probs(const struct MsDecoded *decoded, size_t position, double *out_probs);

/**
 * Builds a lexicon from `n_words` strings.
 *
 * # Safety
 * `words` must point to `n_words` nul-terminated strings; `out` must be
 * writable.
 */
enum MsStatus ms_lexicon_new(const char *const *words, size_t n_words, struct MsLexicon **out);

/**
 * Reads a lexicon file with one word per line.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum MsStatus ms_lexicon_load_path(const char *path, struct MsLexicon **out);

/**
 * # Safety
 * `lexicon` must be null or a handle from this library, not yet freed.
 */
void ms_lexicon_free(struct MsLexicon *lexicon);

/**
 * Number of usable words, or 0 for a null handle.
 *
 * # Safety
 * `lexicon` must be null or a live handle.
 */
size_t ms_lexicon_len(const struct MsLexicon *lexicon);

/**
 * Standard Levenshtein distance.
 *
 * # Safety
 * `a` and `b` must be nul-terminated strings; `out` must be writable.
 */
enum MsStatus ms_edit_distance(const char *a, const char *b, size_t *out);

/**
 * Weighted edit distance from a decoded word to `candidate`.
 *
 * # Safety
 * `decoded` must be a live handle, `candidate` a nul-terminated string and
 * `out` writable.
 */
enum MsStatus ms_weighted_edit_distance(const struct MsDecoded *decoded,
                                        const char *candidate,
                                        bool unit_costs,
                                        double *out);

/**
 * Closest lexicon word to a decoded word. When `max_distance` is
 * non-negative and the best distance exceeds it, `*out_word` is set to null
 * and the call still succeeds. A returned word is released with
 * [`ms_string_free`].
 *
 * # Safety
 * Handles must be live; `out_word` and `out_distance` must be writable.
 */
enum MsStatus ms_best_match(const struct MsDecoded *decoded,
                            const struct MsLexicon *lexicon,
                            bool unit_costs,
                            double max_distance,
                            char **out_word,
                            double *out_distance);

/**
 * Mean binary cross-entropy of `n` logits against {0, 1} targets, with its
 * gradient written to `out_grad` (`n` values, may be null when `n` is 0).
 *
 * # Safety
 * `logits` and `targets` must hold `n` values, `out_grad` room for `n`.
 */
enum MsStatus ms_global_loss(const double *logits,
                             const double *targets,
                             size_t n,
                             double *out_value,
                             double *out_grad);

/**
 * Weighted softmax cross-entropy of `n_cells` rows of [`MS_CHAR_CLASSES`]
 * logits against labels in {-1, 0..=36}. The gradient has the logits'
 * shape.
 *
 * # Safety
 * `logits` and `out_grad` must hold `n_cells * MS_CHAR_CLASSES` values,
 * `labels` `n_cells` values.
 */
enum MsStatus ms_char_loss(const double *logits,
                           const int32_t *labels,
                           size_t n_cells,
                           double *out_value,
                           double *out_grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASKSPOT_H */
