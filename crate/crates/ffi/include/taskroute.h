/* SPDX-License-Identifier: Apache-2.0 */

#ifndef TASKROUTE_H
#define TASKROUTE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TR_OK 0

/**
 * A required pointer argument was null.
 */
#define TR_ERR_NULL 1

#define TR_ERR_INVALID_INPUT 2

#define TR_ERR_USAGE 3

#define TR_ERR_NUMERIC 4

#define TR_ERR_IO 5

/**
 * The engine panicked; the handle arguments are left untouched.
 */
#define TR_ERR_PANIC 6

/**
 * Expert embeddings of one downstream task.
 */
typedef struct TrEmbeddings TrEmbeddings;

/**
 * Result of one expert selection.
 */
typedef struct TrReport TrReport;

/**
 * Downstream training labels.
 */
typedef struct TrTask TrTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *tr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tr_version(void);

/**
 * Reads every `expert_<id>.emb` file of a directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
int32_t tr_embeddings_read_dir(const char *dir, TrEmbeddings **out);

/**
 * Number of experts in the handle, or 0 for null.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t tr_embeddings_count(const TrEmbeddings *h);

/**
 * # Safety
 * `h` must be null or a handle from [`tr_embeddings_read_dir`] not yet freed.
 */
void tr_embeddings_free(TrEmbeddings *h);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t tr_task_read(const char *path, TrTask **out);

/**
 * Number of examples in the task, or 0 for null.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t tr_task_len(const TrTask *h);

/**
 * # Safety
 * `h` must be null or a handle from [`tr_task_read`] not yet freed.
 */
void tr_task_free(TrTask *h);

/**
 * Picks the expert with the best leave-one-out 1-NN accuracy.
 *
 * # Safety
 * `task` and `emb` must be live handles; `out` must be writable.
 */
int32_t tr_knn_select(const TrTask *task, const TrEmbeddings *emb, TrReport **out);

/**
 * Picks the expert with the highest mean log probability over the rows of
 * a row-major `rows × cols` categorical matrix.
 *
 * # Safety
 * `probs` must point to `rows * cols` floats; `out` must be writable.
 */
int32_t tr_epn_select(const float *probs, size_t rows, size_t cols, TrReport **out);

/**
 * Chosen expert id, or `u32::MAX` for null.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
uint32_t tr_report_chosen(const TrReport *r);

/**
 * Number of experts sharing the optimal score, or 0 for null.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
size_t tr_report_tie_count(const TrReport *r);

/**
 * Score of one expert. `TR_ERR_INVALID_INPUT` if the expert was not scored.
 *
 * # Safety
 * `r` must be a live handle; `out` must be writable.
 */
int32_t tr_report_score(const TrReport *r, uint32_t expert, double *out);

/**
 * # Safety
 * `r` must be null or a report handle not yet freed.
 */
void tr_report_free(TrReport *r);

/**
 * Leave-one-out 1-NN accuracy of `n` row-major points of width `dim`.
 * `nn_out` may be null; otherwise it receives `n` neighbour indices.
 *
 * # Safety
 * `data` must hold `n * dim` floats, `labels` `n` labels and `nn_out`
 * (if not null) room for `n` indices.
 */
int32_t tr_loocv_1nn_accuracy(const float *data,
                              size_t n,
                              size_t dim,
                              const uint32_t *labels,
                              double *accuracy_out,
                              size_t *nn_out);

/**
 * Sum of per-class Bernoulli KL divergences `KL(p || q)` over `n` classes.
 *
 * # Safety
 * `p` and `q` must hold `n` doubles; `out` must be writable.
 */
int32_t tr_bernoulli_kl(const double *p, const double *q, size_t n, double *out);

/**
 * ResNet50-v2 backbone parameters and the parameters of one expert's
 * adapters. `bottleneck` 0 means `k = c / 2`, any other value a fixed `k`.
 *
 * # Safety
 * Both out pointers must be writable.
 */
int32_t tr_count_params(uint64_t bottleneck, uint64_t *backbone_out, uint64_t *adapter_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TASKROUTE_H */
