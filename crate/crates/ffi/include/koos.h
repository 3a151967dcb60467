#ifndef KOOS_H
#define KOOS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Length of a feature vector.
 */
#define KOOS_FEATURE_COUNT 9

/**
 * Number of grades.
 */
#define KOOS_GRADE_COUNT 4

typedef enum KoosStatus {
  KOOS_STATUS_OK = 0,
  KOOS_STATUS_NULL_ARGUMENT = 1,
  KOOS_STATUS_INVALID_ARGUMENT = 2,
  KOOS_STATUS_IO = 3,
  KOOS_STATUS_FORMAT = 4,
  KOOS_STATUS_MISSING_VS = 5,
  KOOS_STATUS_MODEL = 6,
  KOOS_STATUS_PANIC = 99,
} KoosStatus;

typedef struct KoosAtlas KoosAtlas;

typedef struct KoosModel KoosModel;

typedef struct KoosVolume KoosVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *koos_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *koos_version(void);

/**
 * Reads a NIfTI-1 label volume (`.nii` or `.nii.gz`).
 */
enum KoosStatus koos_volume_read(const char *path, struct KoosVolume **out);

/**
 * Builds a volume from `dims[0]*dims[1]*dims[2]` labels, x fastest, with a
 * diagonal affine from `spacing`.
 */
enum KoosStatus koos_volume_from_labels(const size_t *dims,
                                        const double *spacing,
                                        const uint16_t *labels,
                                        size_t len,
                                        struct KoosVolume **out);

/**
 * Writes the three grid dimensions to `dims_out`.
 */
enum KoosStatus koos_volume_dims(const struct KoosVolume *vol, size_t *dims_out);

void koos_volume_free(struct KoosVolume *vol);

/**
 * Parses an atlas config (`Name = id, id` lines).
 */
enum KoosStatus koos_atlas_parse(const char *text, struct KoosAtlas **out);

/**
 * The atlas matching volumes written by the phantom generator.
 */
enum KoosStatus koos_atlas_phantom(struct KoosAtlas **out);

void koos_atlas_free(struct KoosAtlas *atlas);

/**
 * Computes the `KOOS_FEATURE_COUNT` features of one case into `out`.
 * Returns `KOOS_STATUS_MISSING_VS` when the volume has no tumour voxels.
 */
enum KoosStatus koos_extract_features(const struct KoosVolume *vol,
                                      const struct KoosAtlas *atlas,
                                      double *out);

/**
 * Loads a model file written by `koos train` (plain or gzip JSON).
 */
enum KoosStatus koos_model_load(const char *path, struct KoosModel **out);

void koos_model_free(struct KoosModel *model);

size_t koos_model_tree_count(const struct KoosModel *model);

/**
 * Predicts the grade (1 to 4) of one feature vector.
 */
enum KoosStatus koos_model_predict(const struct KoosModel *model,
                                   const double *features,
                                   uint8_t *grade_out);

/**
 * Writes the fraction of trees voting for each grade to `out[0..4]`.
 */
enum KoosStatus koos_model_predict_distribution(const struct KoosModel *model,
                                                const double *features,
                                                double *out);

/**
 * Macro-averaged MAE of `n` predicted/true grade pairs. When
 * `per_class_out` is not NULL it receives four per-grade MAEs, NaN for
 * grades absent from the truth.
 */
enum KoosStatus koos_evaluate(const uint8_t *predicted,
                              const uint8_t *truth,
                              size_t n,
                              double *ma_mae_out,
                              double *per_class_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOOS_H */
