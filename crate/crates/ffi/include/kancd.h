#ifndef KANCD_H
#define KANCD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a C API call.
 */
enum KancdStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  KANCD_STATUS_OK = 0,
  KANCD_STATUS_NULL_POINTER = 1,
  KANCD_STATUS_INVALID_UTF8 = 2,
  KANCD_STATUS_BUFFER_TOO_SMALL = 3,
  KANCD_STATUS_SHAPE = 10,
  KANCD_STATUS_DOMAIN = 11,
  KANCD_STATUS_CONTRACT = 12,
  KANCD_STATUS_CONFIG = 13,
  KANCD_STATUS_UNKNOWN_VARIANT = 14,
  KANCD_STATUS_LOOKUP = 15,
  KANCD_STATUS_PARSE = 16,
  KANCD_STATUS_INTEGRITY = 17,
  KANCD_STATUS_IO = 18,
  KANCD_STATUS_UNDEFINED_METRIC = 19,
  KANCD_STATUS_NON_FINITE = 20,
  KANCD_STATUS_CAPABILITY = 21,
  KANCD_STATUS_CHECKPOINT = 22,
  KANCD_STATUS_PANIC = 99,
};
#ifndef __cplusplus
typedef int32_t KancdStatus;
#endif // __cplusplus

/**
 * A loaded model together with its id maps.
 */
typedef struct KancdModel KancdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *kancd_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *kancd_last_error(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
KancdStatus kancd_model_load(const char *path, struct KancdModel **out);

/**
 * Decodes a checkpoint held in memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be writable.
 */
KancdStatus kancd_model_from_bytes(const uint8_t *bytes, size_t len, struct KancdModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void kancd_model_free(struct KancdModel *model);

/**
 * Writes the number of students, exercises and concepts. Any output
 * pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
KancdStatus kancd_model_dims(const struct KancdModel *model,
                             size_t *n_students,
                             size_t *n_exercises,
                             size_t *n_concepts);

/**
 * Variant name, owned by the model handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
const char *kancd_model_variant(const struct KancdModel *model);

/**
 * Epochs the model was trained for.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t kancd_model_trained_epochs(const struct KancdModel *model);

/**
 * Dense index of a student id from the training data, or
 * `KANCD_STATUS_LOOKUP` when the id is unknown.
 *
 * # Safety
 * `model` must be a live handle, `id` NUL-terminated, `out` writable.
 */
KancdStatus kancd_model_student_index(const struct KancdModel *model, const char *id, size_t *out);

/**
 * Probabilities of a correct response for `len` (student, exercise)
 * pairs given as dense indices.
 *
 * # Safety
 * `students`, `exercises` and `out` must each hold `len` values.
 */
KancdStatus kancd_model_predict(const struct KancdModel *model,
                                const size_t *students,
                                const size_t *exercises,
                                size_t len,
                                double *out);

/**
 * Per-concept proficiency of one student. `exercises` lists the exercises
 * the student answered and may be empty. `out` receives `capacity` values
 * at most; the concept count is required.
 *
 * # Safety
 * `exercises` must hold `n_exercises` values and `out` `capacity` values.
 */
KancdStatus kancd_model_mastery(const struct KancdModel *model,
                                size_t student,
                                const size_t *exercises,
                                size_t n_exercises,
                                double *out,
                                size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KANCD_H */
