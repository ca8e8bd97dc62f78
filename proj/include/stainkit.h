#ifndef STAINKIT_H
#define STAINKIT_H

/* C interface to the stain-normalization toolkit. All functions returning
 * sk_status set a thread-local message retrievable via sk_last_error on
 * failure. Objects created by this library must be released with the
 * matching *_free function; strings returned as char* with sk_string_free.
 */

#include <stdint.h>

#if defined(_WIN32)
#define SK_API __declspec(dllexport)
#else
#define SK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sk_status {
  SK_OK = 0,
  SK_ERR_IO = 1,
  SK_ERR_INVALID_ARGUMENT = 2,
  SK_ERR_BAD_FORMAT = 3,
  SK_ERR_SHAPE_MISMATCH = 4,
  SK_ERR_DIMENSION_MISMATCH = 5,
  SK_ERR_WINDOW_TOO_LARGE = 6,
  SK_ERR_DEGENERATE_TEMPLATE = 7,
  SK_ERR_DEGENERATE_INPUT = 8,
  SK_ERR_INSUFFICIENT_TISSUE = 9,
  SK_ERR_NUMERICAL_FAILURE = 10,
  SK_ERR_TOO_FEW_SAMPLES = 11,
  SK_ERR_BAD_WEIGHTS = 12,
  SK_ERR_EPOCH_OUT_OF_RANGE = 13,
  SK_ERR_NON_FINITE_LOSS = 14,
  SK_ERR_SOURCE_TOO_SMALL = 15,
  SK_ERR_UNKNOWN = 100
} sk_status;

typedef struct sk_image sk_image;
typedef struct sk_stain_profile sk_stain_profile;
typedef struct sk_gan sk_gan;

SK_API const char* sk_version(void);
/* Message from the most recent failing call on this thread; "" if none. */
SK_API const char* sk_last_error(void);
SK_API void sk_string_free(char* s);

/* --- images: interleaved RGB doubles in [0,1] --- */
SK_API sk_status sk_image_load_png(const char* path, sk_image** out);
SK_API sk_status sk_image_save_png(const sk_image* image, const char* path);
SK_API sk_status sk_image_create(int width, int height, sk_image** out);
SK_API void sk_image_free(sk_image* image);
SK_API int sk_image_width(const sk_image* image);
SK_API int sk_image_height(const sk_image* image);
/* Borrowed pointer to height*width*3 doubles, valid until the image is freed. */
SK_API double* sk_image_pixels(sk_image* image);
SK_API sk_status sk_image_grayscale(const sk_image* image, sk_image** out);
/* Deterministic color jitter; factor semantics match the training pipeline. */
SK_API sk_status sk_image_jitter(const sk_image* image, double brightness, double contrast,
                                 double saturation, double hue, uint64_t seed, sk_image** out);

/* --- classical template normalizers --- */
/* method: "reinhard", "macenko" or "vahadane" */
SK_API sk_status sk_profile_fit(const char* method, const sk_image* template_image,
                                sk_stain_profile** out);
SK_API sk_status sk_profile_save(const sk_stain_profile* profile, const char* path);
SK_API sk_status sk_profile_load(const char* path, sk_stain_profile** out);
/* Borrowed string, valid while the profile lives. */
SK_API const char* sk_profile_method(const sk_stain_profile* profile);
SK_API sk_status sk_profile_normalize(const sk_stain_profile* profile, const sk_image* image,
                                      sk_image** out);
SK_API void sk_profile_free(sk_stain_profile* profile);

/* --- MultiStain-CycleGAN --- */
/* JSON with "generator", "discriminator" and "train" blocks holding every
 * tunable; edit and pass to sk_gan_create. */
SK_API char* sk_gan_default_config(void);
SK_API sk_status sk_gan_create(const char* config_json, sk_gan** out);
SK_API sk_status sk_gan_load(const char* path, sk_gan** out);
SK_API sk_status sk_gan_save(sk_gan* gan, const char* path);
SK_API void sk_gan_free(sk_gan* gan);
SK_API int sk_gan_epoch(const sk_gan* gan);
/* The model's effective configuration as JSON; free with sk_string_free. */
SK_API char* sk_gan_config_json(const sk_gan* gan);

typedef void (*sk_epoch_callback)(const char* epoch_json, void* user_data);
/* Trains on the PNGs found directly in dir_x / dir_y from the current epoch
 * up to the configured total; max_epochs > 0 caps the epochs run by this
 * call. The callback receives one JSON line of mean losses per epoch. */
SK_API sk_status sk_gan_train_dirs(sk_gan* gan, const char* dir_x, const char* dir_y,
                                   int max_epochs, sk_epoch_callback callback, void* user_data);
/* to_x nonzero applies F (toward domain X), zero applies G (toward Y). */
SK_API sk_status sk_gan_normalize(const sk_gan* gan, const sk_image* image, int to_x,
                                  sk_image** out);

/* --- metrics --- */
SK_API sk_status sk_ssim(const sk_image* a, const sk_image* b, double* out);
/* encoder_spec_json: {"kind":"seeded_random"|"file_weights","feature_dim":N,
 * "seed":S|"weights_path":P}. result_json: {fid,n_ref,n_cand,feature_dim,
 * rank_deficient}. */
SK_API sk_status sk_fid_dirs(const char* encoder_spec_json, const char* dir_a,
                             const char* dir_b, char** result_json);

/* --- tiling --- */
/* Tiles every PNG directly inside in_dir; writes tile PNGs and manifest.csv
 * into out_dir. result_json: {tiles,sources,failures:[...]}. */
SK_API sk_status sk_extract_tiles(const char* in_dir, const char* out_dir, int tile_px,
                                  double overlap_fraction, double tissue_threshold,
                                  const char* domain_label, int annotated, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* STAINKIT_H */
