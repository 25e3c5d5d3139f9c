#ifndef RGTR_H
#define RGTR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum RgtrStatus {
  RGTR_STATUS_OK = 0,
  RGTR_STATUS_NULL_POINTER = 1,
  RGTR_STATUS_INVALID_ARGUMENT = 2,
  RGTR_STATUS_INSUFFICIENT_DATA = 3,
  RGTR_STATUS_DIMENSION = 4,
  RGTR_STATUS_IO = 5,
  RGTR_STATUS_CHECKPOINT = 6,
  RGTR_STATUS_BUFFER_TOO_SMALL = 7,
  RGTR_STATUS_INTERNAL = 8,
  RGTR_STATUS_PANIC = 9,
} RgtrStatus;

// Ranking score used by `rgtr_model_predict`.
typedef enum RgtrScoring {
  RGTR_SCORING_PRODUCT = 0,
  RGTR_SCORING_SUM = 1,
  RGTR_SCORING_CONF_ONLY = 2,
} RgtrScoring;

// Opaque model handle.
typedef struct RgtrModel RgtrModel;

// A span with its ranking score and originating query.
typedef struct RgtrScoredSpan {
  double center;
  double width;
  double score;
  size_t query_index;
} RgtrScoredSpan;

// One ranked prediction of a model.
typedef struct RgtrPrediction {
  double center;
  double width;
  double conf;
  double iou_pred;
  double score;
  size_t query_index;
} RgtrPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next rgtr call on the same thread.
const char *rgtr_last_error(void);

// IoU of two `(center, width)` spans, clamped to `[0, 1]` before measuring.
double rgtr_iou_1d(double c1, double w1, double c2, double w2);

// Generalized IoU of two spans.
double rgtr_giou_1d(double c1, double w1, double c2, double w2);

// Greedy NMS. `out` must hold `n` entries; `*out_len` receives the kept count.
//
// # Safety
// `candidates` must point to `n` readable entries and `out` to `n` writable ones.
enum RgtrStatus rgtr_nms(const struct RgtrScoredSpan *candidates,
                         size_t n,
                         double threshold,
                         struct RgtrScoredSpan *out,
                         size_t *out_len);

// k-means over `n` spans given as `(center, width)` pairs. Writes `k` sorted
// centroids into `out` (`2k` doubles).
//
// # Safety
// `spans` must point to `2n` readable doubles and `out` to `2k` writable ones.
enum RgtrStatus rgtr_kmeans(const double *spans,
                            size_t n,
                            size_t k,
                            uint64_t seed,
                            size_t max_iters,
                            double *out);

// Loads a checkpoint. On success `*out` owns a handle for `rgtr_model_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum RgtrStatus rgtr_model_load(const char *path, struct RgtrModel **out);

// Releases a handle from `rgtr_model_load`. NULL is ignored.
//
// # Safety
// `model` must come from `rgtr_model_load` and not be used afterwards.
void rgtr_model_free(struct RgtrModel *model);

// Feature dimensions and query count of a loaded model.
//
// # Safety
// `model` must be a live handle; output pointers may be NULL.
enum RgtrStatus rgtr_model_info(const struct RgtrModel *model,
                                size_t *d_v,
                                size_t *d_t,
                                size_t *num_queries);

// Grounds one query. `video` is `num_clips x d_v` and `text` is
// `num_words x d_t`, both row-major floats. Ranked post-NMS predictions are
// written to `out` (at most `capacity`, which must be at least the model's
// query count); `*out_len` receives the count.
//
// # Safety
// Pointers must reference buffers of the stated sizes; `model` must be live.
enum RgtrStatus rgtr_model_predict(const struct RgtrModel *model,
                                   const float *video,
                                   size_t num_clips,
                                   const float *text,
                                   size_t num_words,
                                   enum RgtrScoring scoring,
                                   double nms_threshold,
                                   struct RgtrPrediction *out,
                                   size_t capacity,
                                   size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RGTR_H */
