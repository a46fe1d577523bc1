#ifndef PIXMAE_H
#define PIXMAE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define PIXMAE_OK 0

#define PIXMAE_ERR_NULL -1

#define PIXMAE_ERR_UTF8 -2

#define PIXMAE_ERR_PANIC -3

#define PIXMAE_ERR_BUFFER -4

#define PIXMAE_ERR_ARGUMENT -5

/**
 * Input configuration for `pixmae_count_flops`.
 */
typedef enum PixmaeFlopInput {
  /**
   * Every channel group at every timestep plus static groups.
   */
  PIXMAE_FLOP_INPUT_FULL = 0,
  /**
   * A single timestep of multispectral optical data.
   */
  PIXMAE_FLOP_INPUT_MS_PIXEL = 1,
  /**
   * A single timestep of the RGB bands only.
   */
  PIXMAE_FLOP_INPUT_RGB_PIXEL = 2,
} PixmaeFlopInput;

/**
 * Model weights plus normalization statistics.
 */
typedef struct PixmaeCheckpoint PixmaeCheckpoint;

/**
 * Labeled or unlabeled pixel timeseries, in raw units.
 */
typedef struct PixmaeDataset PixmaeDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pixmae_version(void);

/**
 * Code of the last failure on this thread, or 0 if none.
 */
int32_t pixmae_last_error_code(void);

/**
 * Message of the last failure on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *pixmae_last_error_message(void);

void pixmae_clear_error(void);

/**
 * Generates a labeled synthetic dataset.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
int32_t pixmae_dataset_synthetic(size_t n_samples,
                                 size_t n_classes,
                                 float noise,
                                 float dropout,
                                 uint64_t seed,
                                 struct PixmaeDataset **out);

/**
 * Reads a `.pts` or `.csv` dataset, chosen by extension.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t pixmae_dataset_read(const char *path, struct PixmaeDataset **out);

/**
 * Writes a dataset as `.csv` if the path ends in `.csv`, else as `.pts`.
 *
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
int32_t pixmae_dataset_write(const struct PixmaeDataset *ds, const char *path);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t pixmae_dataset_len(const struct PixmaeDataset *ds);

/**
 * Class label of sample `index`; -1 when the sample is unlabeled.
 *
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
int32_t pixmae_dataset_label(const struct PixmaeDataset *ds, size_t index, int64_t *out);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void pixmae_dataset_free(struct PixmaeDataset *ds);

/**
 * Randomly initialised checkpoint with the default architecture scaled
 * to `depth` x `width` (0 keeps the default), normalized with statistics
 * computed from `ds`.
 *
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
int32_t pixmae_checkpoint_init(const struct PixmaeDataset *ds,
                               size_t depth,
                               size_t width,
                               uint64_t seed,
                               struct PixmaeCheckpoint **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t pixmae_checkpoint_load(const char *path, struct PixmaeCheckpoint **out);

/**
 * # Safety
 * `ckpt` must be a live handle and `path` a NUL-terminated string.
 */
int32_t pixmae_checkpoint_save(const struct PixmaeCheckpoint *ckpt, const char *path);

/**
 * Length of one embedding vector, or 0 for a null handle.
 *
 * # Safety
 * `ckpt` must be null or a live handle.
 */
size_t pixmae_checkpoint_embedding_dim(const struct PixmaeCheckpoint *ckpt);

/**
 * Parameter count: the whole model, or the encoder side only.
 *
 * # Safety
 * `ckpt` must be null or a live handle.
 */
size_t pixmae_checkpoint_param_count(const struct PixmaeCheckpoint *ckpt, bool encoder_only);

/**
 * # Safety
 * `ckpt` must be null or a handle not yet freed.
 */
void pixmae_checkpoint_free(struct PixmaeCheckpoint *ckpt);

/**
 * Embeds every sample of `ds` into `out`, row-major, `len(ds) * dim`
 * floats. Fails with `PIXMAE_ERR_BUFFER` when `out_len` is too small;
 * `needed` (if not null) always receives the required length.
 *
 * # Safety
 * `out` must point to `out_len` writable floats.
 */
int32_t pixmae_embed(const struct PixmaeCheckpoint *ckpt,
                     const struct PixmaeDataset *ds,
                     float *out,
                     size_t out_len,
                     size_t *needed);

/**
 * Multiply-accumulate count of one forward pass for the default model
 * scaled to `depth` x `width` (0 keeps the default). With
 * `with_decoder` false only the tokenizer and encoder are counted.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t pixmae_count_flops(size_t depth,
                           size_t width,
                           enum PixmaeFlopInput input,
                           bool with_decoder,
                           uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIXMAE_H */
