#ifndef HEART_H
#define HEART_H

/* Generated by cbindgen from heart-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible functions.
 */
typedef enum HeartStatus {
  HEART_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  HEART_STATUS_NULL_ARGUMENT = 1,
  /**
   * An input string was not valid UTF-8 or contained a NUL byte.
   */
  HEART_STATUS_INVALID_UTF8 = 2,
  /**
   * The input failed to parse.
   */
  HEART_STATUS_PARSE_ERROR = 3,
  /**
   * Parsed input violated a bank or schedule invariant.
   */
  HEART_STATUS_INVARIANT_VIOLATION = 4,
  /**
   * File could not be read.
   */
  HEART_STATUS_IO_ERROR = 5,
  /**
   * Index or argument out of range.
   */
  HEART_STATUS_INVALID_ARGUMENT = 6,
} HeartStatus;

/**
 * Answer shape used by the verifier functions.
 */
typedef enum HeartAnswerType {
  HEART_ANSWER_TYPE_NUMERICAL = 0,
  HEART_ANSWER_TYPE_EXPRESSION = 1,
  HEART_ANSWER_TYPE_FREE_TEXT = 2,
  HEART_ANSWER_TYPE_MULTIPLE_CHOICE = 3,
} HeartAnswerType;

/**
 * Validated cue bank handle.
 */
typedef struct HeartBank HeartBank;

/**
 * Parsed schedule pattern handle.
 */
typedef struct HeartPattern HeartPattern;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *heart_version(void);

/**
 * Message for the most recent failure on this thread, or NULL. Valid until
 * the next failing call on the same thread; do not free.
 */
const char *heart_last_error_message(void);

/**
 * Releases a string returned through a `char **out` parameter.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library and not yet
 * freed; NULL is accepted and ignored.
 */
void heart_string_free(char *s);

/**
 * Loads the bundled 30-cue bank.
 *
 * # Safety
 * `out` must be a valid pointer to a `HeartBank *`.
 */
enum HeartStatus heart_bank_load_default(struct HeartBank **out);

/**
 * Loads and validates a cue bank from a JSONL file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HeartStatus heart_bank_load_file(const char *path, struct HeartBank **out);

/**
 * # Safety
 * `bank` must come from a `heart_bank_load_*` call and not be freed twice.
 */
void heart_bank_free(struct HeartBank *bank);

/**
 * Number of cues in the bank (always 30 for a valid bank); 0 for NULL.
 *
 * # Safety
 * `bank` must be a live handle or NULL.
 */
size_t heart_bank_cue_count(const struct HeartBank *bank);

/**
 * Returns a cue's text by id (e.g. "happy-1") through `out`.
 *
 * # Safety
 * `bank` must be a live handle; `cue_id` a NUL-terminated string; `out` a
 * valid pointer.
 */
enum HeartStatus heart_bank_cue_text(const struct HeartBank *bank, const char *cue_id, char **out);

/**
 * Parses schedule-pattern notation, e.g. "hsur->sa->hsur->sa" or
 * "h/sur -> s/d".
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HeartStatus heart_pattern_parse(const char *spec, struct HeartPattern **out);

/**
 * The default alternating schedule (hsur->sa->hsur->sa).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HeartStatus heart_pattern_default(struct HeartPattern **out);

/**
 * # Safety
 * `pattern` must come from a `heart_pattern_*` call and not be freed twice.
 */
void heart_pattern_free(struct HeartPattern *pattern);

/**
 * Number of iterations the pattern schedules; 0 for NULL.
 *
 * # Safety
 * `pattern` must be a live handle or NULL.
 */
size_t heart_pattern_len(const struct HeartPattern *pattern);

/**
 * Canonical notation for the pattern through `out`.
 *
 * # Safety
 * `pattern` must be a live handle and `out` a valid pointer.
 */
enum HeartStatus heart_pattern_render(const struct HeartPattern *pattern, char **out);

/**
 * Valence of the group at `index` (0-based): 0 positive, 1 negative,
 * 2 mixed; -1 on NULL handle or out-of-range index.
 *
 * # Safety
 * `pattern` must be a live handle or NULL.
 */
int heart_pattern_group_polarity(const struct HeartPattern *pattern, size_t index);

/**
 * Extracts the final answer from a completion: the last balanced
 * `\boxed{...}`, else the tail after "final answer is". `*out` is NULL
 * when the completion carries no recognizable answer.
 *
 * # Safety
 * `completion` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HeartStatus heart_answer_extract(const char *completion, char **out);

/**
 * Canonicalizes an answer for comparison (see the verifier docs).
 *
 * # Safety
 * `answer` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HeartStatus heart_answer_normalize(const char *answer,
                                        enum HeartAnswerType answer_type,
                                        char **out);

/**
 * Exact match after normalization: 1 correct, 0 incorrect, -1 on error.
 *
 * # Safety
 * `pred` and `gold` must be NUL-terminated strings.
 */
int heart_exact_match(const char *pred, const char *gold, enum HeartAnswerType answer_type);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEART_H */
