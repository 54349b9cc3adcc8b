#ifndef ICE_H
#define ICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IceStatus {
  ICE_STATUS_OK = 0,
  ICE_STATUS_NULL_POINTER = 1,
  ICE_STATUS_INVALID_UTF8 = 2,
  ICE_STATUS_INVALID_ARGUMENT = 3,
  ICE_STATUS_IO = 4,
  ICE_STATUS_PARSE = 5,
  ICE_STATUS_TRAINING = 6,
  ICE_STATUS_EVALUATION = 7,
  ICE_STATUS_CHECKPOINT = 8,
  ICE_STATUS_BUFFER_TOO_SMALL = 9,
  ICE_STATUS_OUT_OF_RANGE = 10,
  ICE_STATUS_PANIC = 99,
} IceStatus;

typedef struct IceConfig IceConfig;

typedef struct IceDataset IceDataset;

typedef struct IceModel IceModel;

/**
 * Retrieval metrics of one evaluation.
 */
typedef struct IceEvalReport {
  double map;
  double rank1;
  double rank5;
  double rank10;
  size_t valid_queries;
  size_t excluded_queries;
} IceEvalReport;

/**
 * Per-epoch training record. Loss fields are NaN when no iteration ran;
 * `has_eval` is 0 when the epoch was not evaluated.
 */
typedef struct IceEpochReport {
  size_t epoch;
  size_t cluster_count;
  size_t outlier_count;
  size_t iterations_run;
  size_t iterations_skipped;
  double loss_agnostic;
  double loss_cross;
  double loss_hard;
  double loss_soft;
  double loss_total;
  double mean_kl;
  uint8_t has_eval;
  struct IceEvalReport eval;
} IceEpochReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *ice_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ice_version(void);

/**
 * Default training configuration. Never null.
 */
struct IceConfig *ice_config_new(void);

void ice_config_free(struct IceConfig *config);

/**
 * Sets one `key` to `value` using the same keys as config files.
 */
enum IceStatus ice_config_set(struct IceConfig *config, const char *key, const char *value);

/**
 * Writes the value of `key` into `buf` (nul-terminated) and its length,
 * without the nul, into `len`. Returns `BufferTooSmall` with `len` set when
 * `buf_len` is too short.
 */
enum IceStatus ice_config_get(const struct IceConfig *config,
                              const char *key,
                              char *buf,
                              size_t buf_len,
                              size_t *len);

enum IceStatus ice_config_validate(const struct IceConfig *config);

enum IceStatus ice_dataset_load(const char *path, struct IceDataset **dataset);

enum IceStatus ice_dataset_save(const struct IceDataset *dataset, const char *path);

/**
 * Default synthetic benchmark with the given seed, as three datasets.
 */
enum IceStatus ice_dataset_synthetic(uint64_t seed,
                                     struct IceDataset **train_set,
                                     struct IceDataset **query_set,
                                     struct IceDataset **gallery_set);

/**
 * Number of records, 0 for null.
 */
size_t ice_dataset_len(const struct IceDataset *dataset);

/**
 * Feature dimension, 0 for null.
 */
size_t ice_dataset_dim(const struct IceDataset *dataset);

void ice_dataset_free(struct IceDataset *dataset);

/**
 * Trains on `train_set`. `query_set` and `gallery_set` may both be null to
 * skip evaluation.
 */
enum IceStatus ice_train(const struct IceConfig *config,
                         const struct IceDataset *train_set,
                         const struct IceDataset *query_set,
                         const struct IceDataset *gallery_set,
                         struct IceModel **model);

/**
 * Number of epoch reports, 0 for null or a model loaded from a checkpoint.
 */
size_t ice_model_epoch_count(const struct IceModel *model);

enum IceStatus ice_model_epoch_report(const struct IceModel *model,
                                      size_t index,
                                      struct IceEpochReport *report);

/**
 * Embedding dimension of the model, 0 for null.
 */
size_t ice_model_output_dim(const struct IceModel *model);

/**
 * Writes row-major unit embeddings of every record (`len * output_dim`
 * values) using the momentum encoder.
 */
enum IceStatus ice_model_embed(const struct IceModel *model,
                               const struct IceDataset *dataset,
                               double *buf,
                               size_t buf_len);

enum IceStatus ice_model_evaluate(const struct IceModel *model,
                                  const struct IceDataset *query_set,
                                  const struct IceDataset *gallery_set,
                                  struct IceEvalReport *report);

enum IceStatus ice_model_save(const struct IceModel *model, const char *path);

/**
 * Loads a checkpoint written by `ice_model_save` or the `ice` CLI.
 */
enum IceStatus ice_model_load(const char *path, struct IceModel **model);

void ice_model_free(struct IceModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICE_H */
