#ifndef STSREG_H
#define STSREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  STSREG_STATUS_OK = 0,
  STSREG_STATUS_NULL_POINTER = 1,
  STSREG_STATUS_INVALID_ARGUMENT = 2,
  STSREG_STATUS_IO = 3,
  STSREG_STATUS_CHECKPOINT = 4,
  STSREG_STATUS_UNDEFINED_CORRELATION = 5,
  STSREG_STATUS_PANIC = 6,
} StsregStatus;

/**
 * Ordered categories on equally spaced nodes.
 */
typedef struct StsregMapping StsregMapping;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct StsregModel StsregModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *stsreg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stsreg_version(void);

/**
 * Load a checkpoint file. On success `*out_model` owns a new model handle.
 * Pointers: `path` NUL-terminated, `out_model` valid.
 */
StsregStatus stsreg_model_load(const char *path, StsregModel **out_model);

/**
 * Pointers: `model` must come from [`stsreg_model_load`] and not be used afterwards.
 */
void stsreg_model_free(StsregModel *model);

/**
 * Similarity score for a sentence pair.
 * Pointers: `model` must be a live handle, `s1`/`s2` NUL-terminated, `out_score` valid.
 */
StsregStatus stsreg_model_score(const StsregModel *model,
                                const char *s1,
                                const char *s2,
                                double *out_score);

/**
 * Copy of the model's category mapping. Fails with `INVALID_ARGUMENT` for
 * models trained on graded scores.
 * Pointers: `model` must be a live handle and `out_mapping` valid.
 */
StsregStatus stsreg_model_mapping(const StsregModel *model, StsregMapping **out_mapping);

/**
 * Build a mapping placing `categories[i]` at `start + i * interval`.
 * Pointers: `categories` must point to `count` NUL-terminated strings.
 */
StsregStatus stsreg_mapping_new(const char *const *categories,
                                size_t count,
                                double start,
                                double interval,
                                StsregMapping **out_mapping);

/**
 * Pointers: `mapping` must come from this library and not be used afterwards.
 */
void stsreg_mapping_free(StsregMapping *mapping);

/**
 * Pointers: `mapping` must be a live handle.
 */
size_t stsreg_mapping_len(const StsregMapping *mapping);

/**
 * Name of category `index`, borrowed from the handle; NULL when out of range.
 * Pointers: `mapping` must be a live handle.
 */
const char *stsreg_mapping_category(const StsregMapping *mapping, size_t index);

/**
 * Index of the node nearest to `prediction` (ties go to the higher node).
 * Pointers: `mapping` must be a live handle and `out_index` valid.
 */
StsregStatus stsreg_mapping_classify(const StsregMapping *mapping,
                                     double prediction,
                                     size_t *out_index);

/**
 * Translated ReLU loss of one prediction and its derivative with respect to
 * the prediction. `out_grad` may be NULL.
 * Pointers: `out_value` must be valid; `out_grad` valid or NULL.
 */
StsregStatus stsreg_translated_relu(double prediction,
                                    double label,
                                    double k,
                                    double x0,
                                    double d,
                                    double *out_value,
                                    double *out_grad);

/**
 * Smooth K2 loss; same conventions as [`stsreg_translated_relu`].
 * Pointers: `out_value` must be valid; `out_grad` valid or NULL.
 */
StsregStatus stsreg_smooth_k2(double prediction,
                              double label,
                              double k,
                              double x0,
                              double d,
                              double *out_value,
                              double *out_grad);

/**
 * Spearman rank correlation of two length-`n` arrays.
 * Pointers: `predictions` and `golds` must each point to `n` doubles.
 */
StsregStatus stsreg_spearman(const double *predictions,
                             const double *golds,
                             size_t n,
                             double *out_rho);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STSREG_H */
