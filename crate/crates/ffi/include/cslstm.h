#ifndef CSLSTM_H
#define CSLSTM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CslstmStatus {
  CSLSTM_STATUS_OK = 0,
  /**
   * Bad argument, including null pointers and invalid UTF-8.
   */
  CSLSTM_STATUS_ARGUMENT = 1,
  CSLSTM_STATUS_CONFIG = 2,
  /**
   * Input data could not be ingested or does not fit the model.
   */
  CSLSTM_STATUS_DATA = 3,
  CSLSTM_STATUS_NUMERIC = 4,
  CSLSTM_STATUS_IO = 5,
  CSLSTM_STATUS_CHECKPOINT = 6,
  CSLSTM_STATUS_COMPATIBILITY = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  CSLSTM_STATUS_INTERNAL = 8,
} CslstmStatus;

typedef enum CslstmWavelet {
  CSLSTM_WAVELET_HAAR = 0,
  CSLSTM_WAVELET_DB4 = 1,
} CslstmWavelet;

/**
 * Opaque trained model.
 */
typedef struct CslstmModel CslstmModel;

/**
 * Best-F1 summary of one labelled score series.
 */
typedef struct CslstmF1 {
  double best_f1;
  double best_precision;
  double best_recall;
  double best_threshold;
  double delay_f1;
  double delay_threshold;
} CslstmF1;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *cslstm_last_error(void);

/**
 * Loads a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CslstmStatus cslstm_model_load(const char *path, struct CslstmModel **out);

/**
 * Trains a model from a config file (with `data.path` set) into a new handle.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CslstmStatus cslstm_model_train(const char *config_path, struct CslstmModel **out);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must come from this library and `path` be a NUL-terminated string.
 */
enum CslstmStatus cslstm_model_save(const struct CslstmModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void cslstm_model_free(struct CslstmModel *model);

/**
 * Number of leading points that cannot be scored.
 *
 * # Safety
 * `model` must come from this library or be null (returns 0).
 */
size_t cslstm_model_warmup(const struct CslstmModel *model);

/**
 * Scores `len` raw values. `scores` receives `len` entries; the first
 * [`cslstm_model_warmup`] are NaN.
 *
 * # Safety
 * `values` and `scores` must point to `len` doubles.
 */
enum CslstmStatus cslstm_model_score(const struct CslstmModel *model,
                                     const double *values,
                                     size_t len,
                                     double *scores);

/**
 * Wavelet-denoises `len` values into `out`. `level` 0 picks the default depth.
 *
 * # Safety
 * `values` and `out` must point to `len` doubles.
 */
enum CslstmStatus cslstm_denoise(const double *values,
                                 size_t len,
                                 enum CslstmWavelet basis,
                                 size_t level,
                                 double *out);

/**
 * Best F1 with point adjustment and delay adjustment with budget `k`.
 * `labels` holds 0 or 1 per point.
 *
 * # Safety
 * `scores` and `labels` must point to `len` elements and `out` be valid.
 */
enum CslstmStatus cslstm_best_f1(const double *scores,
                                 const uint8_t *labels,
                                 size_t len,
                                 size_t k,
                                 struct CslstmF1 *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSLSTM_H */
