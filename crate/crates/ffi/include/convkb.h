#ifndef CONVKB_H
#define CONVKB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum ConvkbStatus {
  CONVKB_STATUS_OK = 0,
  /**
   * Null pointer, bad argument, or invalid configuration.
   */
  CONVKB_STATUS_USAGE = 1,
  /**
   * Missing or malformed files, vocabulary mismatch.
   */
  CONVKB_STATUS_DATA = 2,
  /**
   * Non-finite values.
   */
  CONVKB_STATUS_NUMERICAL = 3,
  /**
   * A Rust panic was caught.
   */
  CONVKB_STATUS_PANIC = 4,
} ConvkbStatus;

/**
 * A loaded dataset (train, valid and test splits).
 */
typedef struct ConvkbKb ConvkbKb;

/**
 * A model restored from a checkpoint.
 */
typedef struct ConvkbModel ConvkbModel;

typedef struct ConvkbKbCounts {
  size_t entities;
  size_t relations;
  size_t train;
  size_t valid;
  size_t test;
} ConvkbKbCounts;

/**
 * Ranking metrics; hits are fractions in [0, 1].
 */
typedef struct ConvkbReport {
  double mr;
  double mrr;
  double hits1;
  double hits3;
  double hits10;
} ConvkbReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *convkb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *convkb_version(void);

/**
 * Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
 *
 * # Safety
 * `dir` is a NUL-terminated path; `out` is a valid pointer to write the handle to.
 */
enum ConvkbStatus convkb_kb_load(const char *dir, struct ConvkbKb **out);

/**
 * # Safety
 * `kb` is null or a handle from [`convkb_kb_load`] that has not been freed.
 */
void convkb_kb_free(struct ConvkbKb *kb);

/**
 * # Safety
 * `kb` is a live handle; `out` is a valid pointer.
 */
enum ConvkbStatus convkb_kb_counts(const struct ConvkbKb *kb, struct ConvkbKbCounts *out);

/**
 * Id of the entity labelled `label`; [`ConvkbStatus::Usage`] if unknown.
 *
 * # Safety
 * `kb` is a live handle, `label` a NUL-terminated string, `out` a valid pointer.
 */
enum ConvkbStatus convkb_kb_entity_id(const struct ConvkbKb *kb, const char *label, size_t *out);

/**
 * Id of the relation labelled `label`; [`ConvkbStatus::Usage`] if unknown.
 *
 * # Safety
 * `kb` is a live handle, `label` a NUL-terminated string, `out` a valid pointer.
 */
enum ConvkbStatus convkb_kb_relation_id(const struct ConvkbKb *kb, const char *label, size_t *out);

/**
 * Restores a model from a checkpoint written by `convkb train`.
 *
 * # Safety
 * `path` is a NUL-terminated path; `out` is a valid pointer.
 */
enum ConvkbStatus convkb_model_load(const char *path, struct ConvkbModel **out);

/**
 * # Safety
 * `model` is null or a handle from [`convkb_model_load`] that has not been freed.
 */
void convkb_model_free(struct ConvkbModel *model);

/**
 * [`ConvkbStatus::Data`] unless the model was trained on `kb`'s vocabularies.
 *
 * # Safety
 * Both handles are live.
 */
enum ConvkbStatus convkb_model_check_vocab(const struct ConvkbModel *model,
                                           const struct ConvkbKb *kb);

/**
 * Score of `(head, relation, tail)`; lower means more plausible.
 *
 * # Safety
 * `model` is a live handle; `out` is a valid pointer.
 */
enum ConvkbStatus convkb_model_score(const struct ConvkbModel *model,
                                     size_t head,
                                     size_t relation,
                                     size_t tail,
                                     double *out);

/**
 * Scores `(head, relation, e)` for every entity `e`.
 *
 * # Safety
 * `model` is a live handle; `out` points to `len` writable doubles.
 */
enum ConvkbStatus convkb_model_score_tails(const struct ConvkbModel *model,
                                           size_t head,
                                           size_t relation,
                                           double *out,
                                           size_t len);

/**
 * Scores `(e, relation, tail)` for every entity `e`.
 *
 * # Safety
 * `model` is a live handle; `out` points to `len` writable doubles.
 */
enum ConvkbStatus convkb_model_score_heads(const struct ConvkbModel *model,
                                           size_t relation,
                                           size_t tail,
                                           double *out,
                                           size_t len);

/**
 * Ranks the test split. `filtered` non-zero selects the filtered setting.
 *
 * # Safety
 * Both handles are live; `out` is a valid pointer.
 */
enum ConvkbStatus convkb_evaluate(const struct ConvkbModel *model,
                                  const struct ConvkbKb *kb,
                                  int filtered,
                                  struct ConvkbReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVKB_H */
