#ifndef RBPASTA_H
#define RBPASTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of body parts in every rule row and attention vector.
 */
#define RBP_NUM_PARTS 10

typedef enum RbpStatus {
  RBP_STATUS_OK = 0,
  RBP_STATUS_NULL_POINTER = 1,
  RBP_STATUS_INVALID_UTF8 = 2,
  RBP_STATUS_PARSE = 3,
  RBP_STATUS_DUPLICATE = 4,
  RBP_STATUS_NOT_FOUND = 5,
  RBP_STATUS_DOMAIN = 6,
  RBP_STATUS_COVERAGE = 7,
  RBP_STATUS_INVALID_KIND = 8,
  RBP_STATUS_SHAPE = 9,
  RBP_STATUS_FUSION = 10,
  RBP_STATUS_EMPTY_POOL = 11,
  RBP_STATUS_DIVERGENCE = 12,
  RBP_STATUS_NUMERIC = 13,
  RBP_STATUS_UNDEFINED = 14,
  RBP_STATUS_CONFIG = 15,
  RBP_STATUS_IO = 16,
  RBP_STATUS_PANIC = 17,
} RbpStatus;

typedef enum RbpRuleKind {
  RBP_RULE_KIND_DECIMAL = 0,
  RBP_RULE_KIND_BOOLEAN = 1,
  RBP_RULE_KIND_ALL_ONES = 2,
} RbpRuleKind;

typedef enum RbpSetting {
  RBP_SETTING_DEFAULT = 0,
  RBP_SETTING_KNOWN_OBJECT = 1,
} RbpSetting;

/**
 * Opaque rule matrix handle.
 */
typedef struct RbpRuleMatrix RbpRuleMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none has
 * failed yet. Valid until the next failing call on the same thread.
 */
const char *rbp_last_error_message(void);

/**
 * Parses a rules file (JSON text) into a new handle.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum RbpStatus rbp_rules_from_json(const char *json, struct RbpRuleMatrix **out);

/**
 * Loads a rules file from `path`.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum RbpStatus rbp_rules_load(const char *path, struct RbpRuleMatrix **out);

/**
 * Serializes the matrix; free the result with [`rbp_string_free`].
 *
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum RbpStatus rbp_rules_to_json(const struct RbpRuleMatrix *matrix, char **out);

/**
 * Thresholds a decimal matrix into a new boolean handle.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum RbpStatus rbp_rules_booleanize(const struct RbpRuleMatrix *matrix,
                                    double threshold,
                                    struct RbpRuleMatrix **out);

/**
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum RbpStatus rbp_rules_kind(const struct RbpRuleMatrix *matrix, enum RbpRuleKind *out);

/**
 * Number of class rows.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum RbpStatus rbp_rules_len(const struct RbpRuleMatrix *matrix, size_t *out);

/**
 * Copies the row of `class_id` into `out`, which holds [`RBP_NUM_PARTS`] doubles.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must point to 10 writable doubles.
 */
enum RbpStatus rbp_rules_row(const struct RbpRuleMatrix *matrix, uint32_t class_id, double *out);

/**
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum RbpStatus rbp_rules_row_mean(const struct RbpRuleMatrix *matrix,
                                  uint32_t class_id,
                                  double *out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `matrix` must come from this library and not be used afterwards.
 */
void rbp_rules_free(struct RbpRuleMatrix *matrix);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void rbp_string_free(char *s);

/**
 * Element-wise product of an attention vector and a rule row, all of
 * length [`RBP_NUM_PARTS`]. Weights outside [0, 1] are a domain error.
 *
 * # Safety
 * `attention` and `rule_row` must point to 10 doubles, `out` to 10 writable doubles.
 */
enum RbpStatus rbp_apply_rules(const double *attention, const double *rule_row, double *out);

/**
 * IoU of two `[x1, y1, x2, y2]` boxes.
 *
 * # Safety
 * `a` and `b` must point to 4 doubles; `out` must be writable.
 */
enum RbpStatus rbp_iou(const double *a, const double *b, double *out);

/**
 * All-points interpolated AP of ranked TP flags. `RBP_STATUS_UNDEFINED`
 * when `n_gt` is 0.
 *
 * # Safety
 * `flags` must point to `n` bools (may be null when `n` is 0); `out` must be writable.
 */
enum RbpStatus rbp_average_precision(const bool *flags, size_t n, size_t n_gt, double *out);

/**
 * Evaluates a detections file against a GT file and returns the report
 * JSON; free it with [`rbp_string_free`].
 *
 * # Safety
 * Paths must be nul-terminated strings; `out` must be writable.
 */
enum RbpStatus rbp_evaluate_files(const char *classes_csv,
                                  const char *detections_jsonl,
                                  const char *gt_jsonl,
                                  enum RbpSetting setting,
                                  uint32_t rarity_threshold,
                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBPASTA_H */
