#ifndef GDE_H
#define GDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. The numeric values of the error
 * categories match the command-line exit codes.
 */
typedef enum GdeStatus {
  GDE_STATUS_OK = 0,
  GDE_STATUS_NULL_POINTER = 1,
  /**
   * Bad configuration or argument.
   */
  GDE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or malformed input data, or an I/O failure.
   */
  GDE_STATUS_DATA_ERROR = 3,
  /**
   * Non-finite values or a solver that did not converge.
   */
  GDE_STATUS_NUMERIC_ERROR = 4,
  GDE_STATUS_PANIC = 5,
} GdeStatus;

/**
 * Input file layouts accepted by [`gde_dataset_load`].
 */
typedef enum GdeFormat {
  /**
   * Whitespace-separated `user item [...]` lines.
   */
  GDE_FORMAT_TRIPLETS = 0,
  /**
   * MovieLens `u.data`.
   */
  GDE_FORMAT_MOVIELENS = 1,
} GdeFormat;

typedef enum GdeTarget {
  GDE_TARGET_VALID = 0,
  GDE_TARGET_TEST = 1,
} GdeTarget;

/**
 * Opaque interaction dataset.
 */
typedef struct GdeDataset GdeDataset;

/**
 * Opaque trained model (its output embedding tables).
 */
typedef struct GdeModel GdeModel;

typedef struct GdeDatasetStats {
  size_t users;
  size_t items;
  size_t pairs;
  size_t train;
  size_t valid;
  size_t test;
  size_t cold_users;
} GdeDatasetStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gde_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gde_version(void);

/**
 * Reads interactions from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GdeStatus gde_dataset_load(const char *path, enum GdeFormat format, struct GdeDataset **out);

/**
 * Builds a dataset from `count` contiguous (user, item) pairs.
 *
 * # Safety
 * `users` and `items` must each point to `count` readable values.
 */
enum GdeStatus gde_dataset_from_pairs(size_t user_count,
                                      size_t item_count,
                                      const size_t *users,
                                      const size_t *items,
                                      size_t count,
                                      struct GdeDataset **out);

/**
 * Reads a split directory written by `gde prepare`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GdeStatus gde_dataset_load_split(const char *dir, struct GdeDataset **out);

/**
 * Returns a new dataset whose pairs are labelled train/valid/test. The
 * input is left untouched.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a writable pointer.
 */
enum GdeStatus gde_dataset_split(const struct GdeDataset *ds,
                                 double train_fraction,
                                 double valid_fraction_of_train,
                                 uint64_t seed,
                                 struct GdeDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle and `out` a writable pointer.
 */
enum GdeStatus gde_dataset_stats(const struct GdeDataset *ds, struct GdeDatasetStats *out);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void gde_dataset_free(struct GdeDataset *ds);

/**
 * Trains `model` ("gde", "gde-attn", "mf" or "lightgcn") on the training
 * pairs of a split dataset. `config_json` may be NULL for defaults.
 *
 * # Safety
 * `ds` must be a live dataset handle, strings NUL-terminated and `out`
 * writable.
 */
enum GdeStatus gde_model_train(const struct GdeDataset *ds,
                               const char *model,
                               const char *config_json,
                               uint64_t seed,
                               struct GdeModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum GdeStatus gde_model_load(const char *path, struct GdeModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` NUL-terminated.
 */
enum GdeStatus gde_model_save(const struct GdeModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle; output pointers may be NULL.
 */
enum GdeStatus gde_model_shape(const struct GdeModel *model,
                               size_t *users,
                               size_t *items,
                               size_t *dim);

/**
 * Writes the preference score of `user` for every item into `scores`,
 * which must hold `len >= items` values.
 *
 * # Safety
 * `model` must be a live handle and `scores` writable for `len` values.
 */
enum GdeStatus gde_model_score(const struct GdeModel *model,
                               size_t user,
                               double *scores,
                               size_t len);

/**
 * Top-`k` items for `user`, skipping the user's training items in `ds`.
 * `written` receives the number of ids stored in `items`.
 *
 * # Safety
 * Handles must be live, `items` writable for `k` values and `written`
 * writable.
 */
enum GdeStatus gde_model_recommend(const struct GdeModel *model,
                                   const struct GdeDataset *ds,
                                   size_t user,
                                   size_t k,
                                   size_t *items,
                                   size_t *written);

/**
 * Recall@k and nDCG@k of `model` on the valid or test pairs of `ds`.
 *
 * # Safety
 * Handles must be live; output pointers may be NULL.
 */
enum GdeStatus gde_model_evaluate(const struct GdeModel *model,
                                  const struct GdeDataset *ds,
                                  size_t k,
                                  enum GdeTarget target,
                                  double *recall,
                                  double *ndcg);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void gde_model_free(struct GdeModel *model);

/**
 * Leading eigenvalues of the item-item (`item_side` true) or user-user
 * co-interaction matrix of the training graph, largest first when `smoothed`
 * is true and smallest first otherwise.
 *
 * # Safety
 * `ds` must be a live handle and `values` writable for `count` values.
 */
enum GdeStatus gde_eigenvalues(const struct GdeDataset *ds,
                               bool item_side,
                               bool smoothed,
                               size_t count,
                               uint64_t seed,
                               double *values);

/**
 * Loss-scaling factor applied to a negative item's score.
 */
double gde_adaptive_delta(double negative_score, double clip);

/**
 * Pairwise loss with the adaptive negative weighting.
 */
double gde_adaptive_loss(double positive_score, double negative_score, double clip);

double gde_bpr_loss(double positive_score, double negative_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GDE_H */
