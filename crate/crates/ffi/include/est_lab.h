#ifndef EST_LAB_H
#define EST_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call. `ESTL_OK` is zero; everything else is an error
 * whose text is available from `estl_last_error_message`.
 */
typedef enum EstlStatus {
  ESTL_OK = 0,
  ESTL_NULL_POINTER = 1,
  ESTL_INVALID_ARGUMENT = 2,
  ESTL_CONFIG = 3,
  ESTL_DATA = 4,
  ESTL_IO = 5,
  ESTL_FORMAT = 6,
  ESTL_CAPACITY = 7,
  ESTL_RUNTIME = 8,
  ESTL_PANIC = 9,
} EstlStatus;

/**
 * Which part of a generated dataset to read.
 */
typedef enum EstlSplit {
  ESTL_TRAIN = 0,
  ESTL_VALID = 1,
  ESTL_TEST = 2,
} EstlSplit;

/**
 * The train/valid/test splits of one benchmark task.
 */
typedef struct EstlDataset EstlDataset;

/**
 * A trained or freshly initialised model with its streaming state.
 */
typedef struct EstlModel EstlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *estl_version(void);

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next call into the library from the same thread.
 */
const char *estl_last_error_message(void);

/**
 * Builds a published configuration (e.g. "est-1-1k") for the given input
 * and output widths, initialised from `seed`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum EstlStatus estl_model_new(const char *name,
                               size_t input_dim,
                               size_t output_dim,
                               uint64_t seed,
                               struct EstlModel **out);

/**
 * Loads a checkpoint written by `est-lab train` or `estl_model_save`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EstlStatus estl_model_load(const char *path, struct EstlModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EstlStatus estl_model_save(const struct EstlModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void estl_model_free(struct EstlModel *model);

/**
 * Clears the streaming state.
 *
 * # Safety
 * `model` must come from this library.
 */
enum EstlStatus estl_model_reset(struct EstlModel *model);

/**
 * Writes the trainable parameter count and the input/output widths.
 * Any out pointer may be null.
 *
 * # Safety
 * `model` must come from this library.
 */
enum EstlStatus estl_model_info(const struct EstlModel *model,
                                size_t *num_params,
                                size_t *input_dim,
                                size_t *output_dim);

/**
 * Feeds one token and writes the model output for it.
 *
 * # Safety
 * `input` must hold `input_len` values and `output` room for `output_len`.
 */
enum EstlStatus estl_model_step(struct EstlModel *model,
                                const double *input,
                                size_t input_len,
                                double *output,
                                size_t output_len);

/**
 * Generates a benchmark task at its published settings from `seed`.
 * Sequential MNIST reads its files from `EST_LAB_DATA_DIR`.
 *
 * # Safety
 * `task` must be a NUL-terminated string; `out` must be writable.
 */
enum EstlStatus estl_dataset_generate(const char *task, uint64_t seed, struct EstlDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void estl_dataset_free(struct EstlDataset *dataset);

/**
 * Sample count of a split and the per-step widths and sequence length
 * shared by every sample. Any out pointer may be null.
 *
 * # Safety
 * `dataset` must come from this library.
 */
enum EstlStatus estl_dataset_info(const struct EstlDataset *dataset,
                                  enum EstlSplit split,
                                  size_t *samples,
                                  size_t *length,
                                  size_t *input_dim,
                                  size_t *output_dim);

/**
 * Copies one sample: `inputs` gets length × input_dim values, `targets`
 * length × output_dim (row-major), `mask` one byte per step (1 = scored).
 *
 * # Safety
 * Buffers must be at least the stated lengths.
 */
enum EstlStatus estl_dataset_sample(const struct EstlDataset *dataset,
                                    enum EstlSplit split,
                                    size_t index,
                                    double *inputs,
                                    size_t inputs_len,
                                    double *targets,
                                    size_t targets_len,
                                    uint8_t *mask,
                                    size_t mask_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EST_LAB_H */
