#ifndef DCEN_H
#define DCEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DcenStatus {
  DCEN_STATUS_OK = 0,
  DCEN_STATUS_NULL_POINTER = 1,
  DCEN_STATUS_INVALID_UTF8 = 2,
  DCEN_STATUS_IO = 3,
  DCEN_STATUS_PARSE = 4,
  DCEN_STATUS_DIMENSION = 5,
  DCEN_STATUS_CONFIG = 6,
  DCEN_STATUS_ARGUMENT = 7,
  DCEN_STATUS_VALIDATION = 8,
  DCEN_STATUS_UNKNOWN_CLASS = 9,
  DCEN_STATUS_EMPTY_SPLIT = 10,
  DCEN_STATUS_CHECKPOINT = 11,
  DCEN_STATUS_NON_FINITE = 12,
  DCEN_STATUS_PANIC = 13,
} DcenStatus;

/**
 * Opaque dataset handle.
 */
typedef struct DcenDataset DcenDataset;

/**
 * Opaque trained-model handle: network state plus its training config.
 */
typedef struct DcenModel DcenModel;

/**
 * GZSL evaluation summary. Accuracies are percentages.
 */
typedef struct DcenReport {
  double mca_u;
  double mca_s;
  double h;
  size_t num_test_seen;
  size_t num_test_unseen;
} DcenReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Generates a synthetic dataset. `synth_toml` holds `SynthConfig` keys as
 * TOML text, or is null for the defaults.
 *
 * # Safety
 *
 * `synth_toml` is null or a NUL-terminated string; `out` is null or
 * writable.
 */
enum DcenStatus dcen_dataset_generate(const char *synth_toml, struct DcenDataset **out);

/**
 * Loads a dataset directory written by `dcen synth` or
 * [`dcen_dataset_save`].
 *
 * # Safety
 *
 * `dir` is null or a NUL-terminated string; `out` is null or writable.
 */
enum DcenStatus dcen_dataset_load(const char *dir, struct DcenDataset **out);

/**
 * # Safety
 *
 * `ds` is null or a live dataset handle; `dir` is null or a
 * NUL-terminated string.
 */
enum DcenStatus dcen_dataset_save(const struct DcenDataset *ds, const char *dir);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 *
 * `ds` is null or a live dataset handle.
 */
size_t dcen_dataset_num_classes(const struct DcenDataset *ds);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 *
 * `ds` is null or a dataset handle not yet freed.
 */
void dcen_dataset_free(struct DcenDataset *ds);

/**
 * Trains a model on `ds`. `train_toml` holds `TrainConfig` keys as TOML
 * text, or is null for the defaults.
 *
 * # Safety
 *
 * `ds` is null or a live dataset handle; `train_toml` is null or a
 * NUL-terminated string; `out` is null or writable.
 */
enum DcenStatus dcen_train(const struct DcenDataset *ds,
                           const char *train_toml,
                           struct DcenModel **out);

/**
 * # Safety
 *
 * `path` is null or a NUL-terminated string; `out` is null or writable.
 */
enum DcenStatus dcen_model_load(const char *path, struct DcenModel **out);

/**
 * # Safety
 *
 * `model` is null or a live model handle; `path` is null or a
 * NUL-terminated string.
 */
enum DcenStatus dcen_model_save(const struct DcenModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 *
 * `model` is null or a model handle not yet freed.
 */
void dcen_model_free(struct DcenModel *model);

/**
 * GZSL evaluation of `model` on the test splits of `ds`.
 *
 * # Safety
 *
 * `model` and `ds` are null or live handles; `out` is null or writable.
 */
enum DcenStatus dcen_evaluate(const struct DcenModel *model,
                              const struct DcenDataset *ds,
                              struct DcenReport *out);

/**
 * `2uv/(u+v)`, or 0 when both are 0.
 */
double dcen_harmonic_mean(double mca_u, double mca_s);

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *dcen_last_error(void);

/**
 * Library version as a static string.
 */
const char *dcen_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCEN_H */
