/* Toy multi-subject personalized diffusion: C interface. */
#ifndef MSDIFF_MSDIFF_H
#define MSDIFF_MSDIFF_H

#include <stddef.h>
#include <stdint.h>

#if defined(MSD_BUILDING_LIBRARY)
#define MSD_API __attribute__((visibility("default")))
#else
#define MSD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum msd_status {
    MSD_OK = 0,
    MSD_ERR_SHAPE = 1,
    MSD_ERR_CONTRACT = 2,
    MSD_ERR_VOCAB = 3,
    MSD_ERR_NUMERIC = 4,
    MSD_ERR_PARSE = 5,
    MSD_ERR_IO = 6,
    MSD_ERR_VERSION = 7,
    MSD_ERR_INTERNAL = 8,
    MSD_ERR_ARGUMENT = 9 /* null handle or pointer */
} msd_status;

typedef struct msd_model msd_model;

/* Message of the last failed call on this thread; "" after a success. */
MSD_API const char* msd_last_error(void);
MSD_API const char* msd_status_name(msd_status status);

/* config_json may be NULL for defaults. It supplies data and crop settings. */
MSD_API msd_status msd_gen_data(const char* out_dir, size_t count, uint64_t seed, double jitter,
                                const char* config_json);

MSD_API msd_status msd_model_create(const char* config_json, msd_model** out);
MSD_API msd_status msd_model_load(const char* path, msd_model** out);
MSD_API msd_status msd_model_save(const msd_model* model, const char* path);
MSD_API void msd_model_free(msd_model* model);
MSD_API msd_status msd_model_num_params(const msd_model* model, size_t* out);
/* Run config echo as JSON; the string lives until the next call on this handle. */
MSD_API msd_status msd_model_config_json(msd_model* model, const char** out);

/* Trains from config_json (NULL for defaults) on the dataset in data_dir and
 * writes the final checkpoint to ckpt_path, intermediate ones to
 * <ckpt_path>.step<N> when train.checkpoint_every > 0, and the loss log
 * (CSV step,l_ip,l_am) to loss_csv_path when it is not NULL. */
MSD_API msd_status msd_train(const char* config_json, const char* data_dir, const char* ckpt_path,
                             const char* loss_csv_path);

typedef struct msd_subject {
    const char* image_path; /* PPM reference image */
    const char* entity;     /* vocabulary word, e.g. "circle" */
    double box[4];          /* x0, y0, x1, y1 in [0, 1] */
} msd_subject;

typedef struct msd_sample_options {
    const char* prompt;
    const msd_subject* subjects;
    size_t num_subjects;
    double guidance_scale;
    double gamma;
    size_t num_steps;
    size_t num_samples;
    uint64_t seed;
    int pseudo_layout; /* nonzero enables pseudo layout guidance */
    double pseudo_threshold;
    size_t pseudo_switch_step;
    int pseudo_use_prior; /* use the given boxes before the switch step */
    int dump_attention;   /* also write per-subject PGM heatmaps */
} msd_sample_options;

/* Fills options with the sampler defaults of the model's config. */
MSD_API msd_status msd_sample_options_init(const msd_model* model, msd_sample_options* options);
/* Writes <out_prefix>_<k>.ppm for every trajectory k. */
MSD_API msd_status msd_sample(const msd_model* model, const msd_sample_options* options, const char* out_prefix);

/* Runs the bench file and writes the report JSON. Guidance, gamma and steps
 * come from the model's sampler config. failed_cases may be NULL. */
MSD_API msd_status msd_eval(const msd_model* model, const char* bench_path, const char* report_path,
                            size_t samples_per_case, size_t* failed_cases);

#ifdef __cplusplus
}
#endif

#endif
