#ifndef VAEMMD_H
#define VAEMMD_H

#include <stddef.h>
#include <stdint.h>

#if defined(VAEMMD_BUILDING_LIBRARY)
#define VAEMMD_API __attribute__((visibility("default")))
#else
#define VAEMMD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Return codes. The CLI uses them as exit statuses. */
typedef enum {
  VAEMMD_OK = 0,
  VAEMMD_ERR_INTERNAL = 1,  /* malformed data, I/O failure, API misuse */
  VAEMMD_ERR_CONFIG = 2,    /* missing or invalid configuration or argument */
  VAEMMD_ERR_MISSING = 3,   /* an input file or upstream artifact does not exist */
  VAEMMD_ERR_NUMERICAL = 4  /* non-finite values or degenerate statistics */
} vaemmd_status;

typedef struct vaemmd_volume vaemmd_volume;
typedef struct vaemmd_model vaemmd_model;

VAEMMD_API const char* vaemmd_version(void);
/* Message of the most recent failure on the calling thread ("" if none). */
VAEMMD_API const char* vaemmd_last_error(void);
/* JSON summary written by the most recent successful command on this thread. */
VAEMMD_API const char* vaemmd_last_result(void);
/* Caps worker threads; n >= 1. */
VAEMMD_API int vaemmd_set_threads(int n);
VAEMMD_API int vaemmd_get_threads(void);

/* Commands. Paths are UTF-8. Optional arguments may be NULL. */
VAEMMD_API int vaemmd_gen_phantoms(const char* config_path, const char* out_dir);
VAEMMD_API int vaemmd_train_vae(const char* config_path, const char* manifest_path, const char* out_dir);
VAEMMD_API int vaemmd_reconstruct(const char* checkpoint_path, const char* manifest_path, const char* out_dir,
                                  const char* split);
VAEMMD_API int vaemmd_embed(const char* checkpoint_path, const char* manifest_path, const char* method,
                            const char* out_dir, uint64_t seed);
/* config_path supplies evaluation options and the seed. */
VAEMMD_API int vaemmd_eval_domain(const char* checkpoint_path, const char* manifest_path, const char* out_dir,
                                  const char* config_path);
VAEMMD_API int vaemmd_train_seg(const char* config_path, const char* manifest_path, const char* variant,
                                const char* vae_checkpoint_path, const char* out_dir);
VAEMMD_API int vaemmd_eval_seg(const char* seg_checkpoint_path, const char* manifest_path, const char* out_dir,
                               const char* config_path);
VAEMMD_API int vaemmd_reproduce(const char* config_path, const char* out_dir);

/* Volumes (RVOL files). */
VAEMMD_API int vaemmd_volume_read(const char* path, vaemmd_volume** out);
VAEMMD_API int vaemmd_volume_write(const vaemmd_volume* volume, const char* path);
VAEMMD_API int vaemmd_volume_shape(const vaemmd_volume* volume, int64_t shape[3]);
VAEMMD_API int vaemmd_volume_is_mask(const vaemmd_volume* volume, int* is_mask);
/* Copies all voxels as float; `count` must equal the voxel count. */
VAEMMD_API int vaemmd_volume_copy(const vaemmd_volume* volume, float* dst, size_t count);
VAEMMD_API void vaemmd_volume_free(vaemmd_volume* volume);

/* Trained VAE checkpoints. */
VAEMMD_API int vaemmd_model_load(const char* checkpoint_path, vaemmd_model** out);
VAEMMD_API int vaemmd_model_latent_dim(const vaemmd_model* model, int* dim);
/* Latent mean of a raw image volume; `count` must equal the latent dim. */
VAEMMD_API int vaemmd_model_encode(const vaemmd_model* model, const vaemmd_volume* raw, double* mu, size_t count);
/* Eval-mode reconstruction of the prepared image. */
VAEMMD_API int vaemmd_model_reconstruct(const vaemmd_model* model, const vaemmd_volume* raw, vaemmd_volume** out);
VAEMMD_API void vaemmd_model_free(vaemmd_model* model);

#ifdef __cplusplus
}
#endif

#endif
