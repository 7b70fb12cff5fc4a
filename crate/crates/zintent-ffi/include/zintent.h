#ifndef ZINTENT_H
#define ZINTENT_H

/* Generated by cbindgen from the zintent-ffi crate; regenerate with a build, do not edit. */

#include <stddef.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum ZintentStatus {
  ZINTENT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ZINTENT_STATUS_NULL_ARG = 1,
  /**
   * A path argument was not valid UTF-8.
   */
  ZINTENT_STATUS_UTF8 = 2,
  /**
   * A file could not be read.
   */
  ZINTENT_STATUS_IO = 3,
  /**
   * A file was read but could not be parsed.
   */
  ZINTENT_STATUS_FORMAT = 4,
  /**
   * Inputs were structurally valid but the settings are unusable.
   */
  ZINTENT_STATUS_CONFIG = 5,
  /**
   * The database was built by a different model pipeline.
   */
  ZINTENT_STATUS_FINGERPRINT = 6,
  /**
   * Any other failure, including numeric errors and panics.
   */
  ZINTENT_STATUS_RUNTIME = 7,
} ZintentStatus;

/**
 * A loaded model/database pair. Create with `zintent_open`, destroy with
 * `zintent_close`. Safe to share across threads for concurrent classify
 * calls; open and close must not race with use.
 */
typedef struct ZintentClassifier ZintentClassifier;

/**
 * One ranked intent hypothesis.
 */
typedef struct ZintentPrediction {
  size_t intent;
  double similarity;
  size_t sentence_id;
} ZintentPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message for the most recent failure on this thread; empty after a
 * success. The pointer stays valid until the next call on the same thread.
 */
const char *zintent_last_error(void);

/**
 * The crate version as a static NUL-terminated string.
 */
const char *zintent_version(void);

/**
 * Loads a model checkpoint and an embedding database and verifies that the
 * database was built by this model's pipeline. On success writes the new
 * handle to `out`; on failure writes null.
 *
 * # Safety
 * `checkpoint_path` and `db_path` must be NUL-terminated strings and `out`
 * must be a valid pointer.
 */
enum ZintentStatus zintent_open(const char *checkpoint_path,
                                const char *db_path,
                                struct ZintentClassifier **out);

/**
 * Releases a handle. Null is a no-op.
 *
 * # Safety
 * `handle` must be null or a pointer from `zintent_open` not yet closed.
 */
void zintent_close(struct ZintentClassifier *handle);

/**
 * Features per frame the model expects; 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be null or a live handle from `zintent_open`.
 */
size_t zintent_feature_dim(const struct ZintentClassifier *handle);

/**
 * Distinct intents in the loaded database (the most predictions a classify
 * call can return); 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be null or a live handle from `zintent_open`.
 */
size_t zintent_intent_count(const struct ZintentClassifier *handle);

/**
 * Classifies one utterance given as a row-major `n_frames` x `dim` buffer.
 * Writes up to `capacity` predictions, best first, and stores the number
 * written in `n_written`.
 *
 * # Safety
 * `handle` must be a live handle, `frames` must hold `n_frames * dim`
 * doubles, `out` must have room for `capacity` predictions, and `n_written`
 * must be a valid pointer.
 */
enum ZintentStatus zintent_classify(const struct ZintentClassifier *handle,
                                    const double *frames,
                                    size_t n_frames,
                                    size_t dim,
                                    struct ZintentPrediction *out,
                                    size_t capacity,
                                    size_t *n_written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZINTENT_H */
