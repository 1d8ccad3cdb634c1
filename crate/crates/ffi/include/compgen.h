#ifndef COMPGEN_H
#define COMPGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CgStatus {
  CG_STATUS_OK = 0,
  CG_STATUS_NULL_POINTER = 1,
  CG_STATUS_INVALID_UTF8 = 2,
  CG_STATUS_INVALID_ARGUMENT = 3,
  CG_STATUS_CONFIG = 4,
  CG_STATUS_IO = 5,
  CG_STATUS_CHECKSUM = 6,
  CG_STATUS_MISALIGNED = 7,
  CG_STATUS_UNDEFINED = 8,
  CG_STATUS_BUFFER_TOO_SMALL = 9,
  CG_STATUS_FAILED = 10,
  CG_STATUS_PANIC = 11,
} CgStatus;

/**
 * Trained autoencoder.
 */
typedef struct CgModel CgModel;

/**
 * Compositional train/test split.
 */
typedef struct CgSplit CgSplit;

/**
 * Factored image store.
 */
typedef struct CgStore CgStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *cg_last_error(void);

/**
 * Library version as a static string.
 */
const char *cg_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cg_string_free(char *s);

/**
 * Renders a store for a named grid: `"desk"` or `"dsprites"`.
 *
 * # Safety
 * `grid` must be a nul-terminated string, `out` writable.
 */
enum CgStatus cg_store_build(const char *grid, size_t resolution, struct CgStore **out);

/**
 * Renders a store for a dSprites-like grid with custom cardinalities.
 *
 * # Safety
 * `out` must be writable.
 */
enum CgStatus cg_store_build_custom(size_t n_scale,
                                    size_t n_rotation,
                                    size_t n_position,
                                    size_t resolution,
                                    struct CgStore **out);

/**
 * # Safety
 * `path` must be a nul-terminated string, `out` writable.
 */
enum CgStatus cg_store_load(const char *path, struct CgStore **out);

/**
 * # Safety
 * `store` must be a live handle, `path` a nul-terminated string.
 */
enum CgStatus cg_store_save(const struct CgStore *store, const char *path);

/**
 * Number of images; 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t cg_store_len(const struct CgStore *store);

/**
 * Writes height, width and channels.
 *
 * # Safety
 * `store` must be a live handle and `shape` point to three writable values.
 */
enum CgStatus cg_store_shape(const struct CgStore *store, size_t *shape);

/**
 * Copies one image (`H·W·C` bytes) into `buf`.
 *
 * # Safety
 * `store` must be a live handle and `buf` hold `len` writable bytes.
 */
enum CgStatus cg_store_image(const struct CgStore *store, size_t flat_id, uint8_t *buf, size_t len);

/**
 * SHA-256 of the store payload as hex.
 *
 * # Safety
 * `store` must be a live handle, `out` writable.
 */
enum CgStatus cg_store_checksum(const struct CgStore *store, char **out);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void cg_store_free(struct CgStore *store);

/**
 * Draws a compositional split of the store's grid.
 *
 * # Safety
 * `store` must be a live handle, `out` writable.
 */
enum CgStatus cg_split_new(const struct CgStore *store,
                           double ratio,
                           uint64_t seed,
                           struct CgSplit **out);

/**
 * Parses a split from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string, `out` writable.
 */
enum CgStatus cg_split_from_json(const char *json, struct CgSplit **out);

/**
 * # Safety
 * `split` must be a live handle, `out` writable.
 */
enum CgStatus cg_split_to_json(const struct CgSplit *split, char **out);

/**
 * Train (`test == 0`) or test (`test != 0`) id count; 0 for a null handle.
 *
 * # Safety
 * `split` must be null or a live handle.
 */
size_t cg_split_len(const struct CgSplit *split, bool test);

/**
 * Copies the train or test ids into `buf`.
 *
 * # Safety
 * `split` must be a live handle and `buf` hold `len` writable values.
 */
enum CgStatus cg_split_ids(const struct CgSplit *split, bool test, uint64_t *buf, size_t len);

/**
 * # Safety
 * `split` must be null or a handle not yet freed.
 */
void cg_split_free(struct CgSplit *split);

/**
 * Trains a model on the split's train ids. `model_json` is a model config
 * (`{"family": "vae", ...}` or `{"family": "el", ...}`), `train_json` a
 * training config (`{"steps": ..., "seed": ...}`). Checkpoints and the
 * loss log go to `out_dir`.
 *
 * # Safety
 * Handles must be live, strings nul-terminated, `out` writable.
 */
enum CgStatus cg_model_train(const struct CgStore *store,
                             const struct CgSplit *split,
                             const char *model_json,
                             const char *train_json,
                             const char *out_dir,
                             struct CgModel **out);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `path` must be a nul-terminated string, `out` writable.
 */
enum CgStatus cg_model_load(const char *path, struct CgModel **out);

/**
 * The model's configuration as JSON.
 *
 * # Safety
 * `model` must be a live handle, `out` writable.
 */
enum CgStatus cg_model_config_json(const struct CgModel *model, char **out);

/**
 * Extracts one representation mode (`"pre"`, `"latent"` or `"post"`) for
 * `ids`. Writes the row width to `dim`; when `buf` is null only `dim` is
 * written, otherwise `buf` must hold `n_ids · dim` floats.
 *
 * # Safety
 * Handles must be live, `ids` hold `n_ids` values, `dim` be writable and
 * `buf` be null or hold `buf_len` writable floats.
 */
enum CgStatus cg_model_extract(const struct CgModel *model,
                               const struct CgStore *store,
                               const uint64_t *ids,
                               size_t n_ids,
                               const char *mode,
                               uint64_t seed,
                               size_t *dim,
                               float *buf,
                               size_t buf_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cg_model_free(struct CgModel *model);

/**
 * Few-label readout on caller features. `train_features` rows align with
 * `train_ids` (labeled samples), `test_features` with `test_ids`; both are
 * row-major with width `dim`. The report is returned as JSON.
 *
 * # Safety
 * `split` must be a live handle; each id buffer holds its count and each
 * feature buffer `count · dim` values; `kind` is nul-terminated.
 */
enum CgStatus cg_probe_json(const struct CgSplit *split,
                            const uint64_t *train_ids,
                            size_t n_train,
                            const double *train_features,
                            const uint64_t *test_ids,
                            size_t n_test,
                            const double *test_features,
                            size_t dim,
                            const char *kind,
                            uint64_t seed,
                            char **out);

/**
 * Oracle readout (`oracle` is `"attributes"` or `"attributes_squared"`)
 * with `n_label` labeled train samples, scored on the test split.
 *
 * # Safety
 * `split` must be a live handle, strings nul-terminated, `out` writable.
 */
enum CgStatus cg_probe_oracle_json(const struct CgSplit *split,
                                   const char *oracle,
                                   const char *kind,
                                   size_t n_label,
                                   uint64_t seed,
                                   char **out);

/**
 * MIG, SAP, DCI and IRS of caller latents (row-major `n · dim`, rows
 * aligned with `ids`). `config_json` may be null for defaults.
 *
 * # Safety
 * `split` must be a live handle, `ids` hold `n` values and `latents`
 * `n · dim`; `config_json` is null or nul-terminated.
 */
enum CgStatus cg_metrics_json(const struct CgSplit *split,
                              const uint64_t *ids,
                              size_t n,
                              const double *latents,
                              size_t dim,
                              const char *config_json,
                              char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPGEN_H */
