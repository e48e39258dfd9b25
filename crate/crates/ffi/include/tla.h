#ifndef TLA_H
#define TLA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped on any incompatible change to this interface.
 */
#define TLA_ABI_VERSION 1

/**
 * Class index reported for a rejected input.
 */
#define TLA_REJECTED -1

typedef enum TlaStatus {
  TLA_STATUS_OK = 0,
  TLA_STATUS_NULL_POINTER = 1,
  TLA_STATUS_INVALID_ARGUMENT = 2,
  TLA_STATUS_IO = 3,
  TLA_STATUS_FORMAT = 4,
  TLA_STATUS_INCOMPATIBLE = 5,
  TLA_STATUS_NUMERIC = 6,
  TLA_STATUS_BUFFER_TOO_SMALL = 7,
  TLA_STATUS_PANIC = 8,
  TLA_STATUS_INTERNAL = 9,
} TlaStatus;

typedef enum TlaRegime {
  TLA_REGIME_EXPLODES = 0,
  TLA_REGIME_VANISHES = 1,
  TLA_REGIME_NEUTRAL = 2,
} TlaRegime;

/**
 * A loaded checkpoint. Create with [`tla_model_load`], release with
 * [`tla_model_free`]. Safe to share across threads for reading.
 */
typedef struct TlaModel TlaModel;

typedef struct TlaModelInfo {
  uint32_t num_classes;
  uint32_t max_len;
  uint32_t vocab_size;
  /**
   * Threshold stored with the head, or the default when there is none.
   */
  double threshold;
  /**
   * Nonzero when a trained rejection head is attached.
   */
  uint8_t has_head;
} TlaModelInfo;

typedef struct TlaEvalSummary {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double coverage;
  uint64_t rejected;
  uint64_t total;
} TlaEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t tla_abi_version(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tla_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *tla_last_error(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TlaStatus tla_model_load(const char *path, struct TlaModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or come from `tla_model_load` and not be used again.
 */
void tla_model_free(struct TlaModel *model);

/**
 * # Safety
 * `m` must be a live model and `out` a valid pointer.
 */
enum TlaStatus tla_model_info(const struct TlaModel *m, struct TlaModelInfo *out);

/**
 * Classifies one text. `out_class` receives the class index or
 * `TLA_REJECTED`. When `out_probs` is non-null it receives the class
 * distribution and must hold at least `probs_len ≥ num_classes` values.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out_class` a valid pointer;
 * `out_probs` null or valid for `probs_len` writes.
 */
enum TlaStatus tla_model_predict(const struct TlaModel *m,
                                 const char *text,
                                 double theta,
                                 int32_t *out_class,
                                 double *out_probs,
                                 size_t probs_len);

/**
 * Support-weighted metrics on a labelled CSV in the checkpoint's language.
 *
 * # Safety
 * `csv_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TlaStatus tla_model_evaluate(const struct TlaModel *m,
                                  const char *csv_path,
                                  double theta,
                                  struct TlaEvalSummary *out);

/**
 * Applies the threshold rule to a probability vector: the argmax class if
 * its probability is at least `theta`, otherwise `TLA_REJECTED`.
 *
 * # Safety
 * `probs` must be valid for `len` reads and `out_class` a valid pointer.
 */
enum TlaStatus tla_classify_probs(const double *probs,
                                  size_t len,
                                  double theta,
                                  int32_t *out_class);

/**
 * `W^n·x0` and the regime of the scalar recurrence.
 *
 * # Safety
 * `out_value` and `out_regime` must be valid pointers.
 */
enum TlaStatus tla_scalar_recurrence(double w,
                                     double x0,
                                     uint32_t n,
                                     double *out_value,
                                     enum TlaRegime *out_regime);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLA_H */
