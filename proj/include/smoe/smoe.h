/* Copyright (c) 2026, smoe-stereo contributors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the smoe-stereo library.
 *
 * Every object is an opaque handle created by a smoe_*_create/load/generate
 * call and released with the matching *_free. Functions return a
 * smoe_status; on failure smoe_last_error() describes the problem. The
 * message is per thread and stays valid until the next failing call on that
 * thread. Handles may be shared between threads for reading; calls that
 * mutate a handle (train, pretrain, config setters) need exclusive access.
 */
#ifndef SMOE_SMOE_H
#define SMOE_SMOE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SMOE_API __declspec(dllexport)
#elif defined(__GNUC__)
#define SMOE_API __attribute__((visibility("default")))
#else
#define SMOE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum smoe_status {
    SMOE_OK = 0,
    SMOE_ERR_INTERNAL = 1,
    SMOE_ERR_CONFIG = 2,
    SMOE_ERR_NUMERIC = 3,
    SMOE_ERR_IO = 4,
    SMOE_ERR_CORRUPT = 5,
    SMOE_ERR_SHAPE = 6,
    SMOE_ERR_CONTRACT = 7,
    SMOE_ERR_GENERATION = 8,
    SMOE_ERR_INVALID_ARGUMENT = 9
} smoe_status;

typedef enum smoe_mode { SMOE_MODE_INFER = 0, SMOE_MODE_TRAIN = 1 } smoe_mode;

/* Which samples of a dataset an operation sees. The split is the seeded
 * train/eval partition defined by the config's data_seed and train_fraction. */
typedef enum smoe_split { SMOE_SPLIT_ALL = 0, SMOE_SPLIT_TRAIN = 1, SMOE_SPLIT_EVAL = 2 } smoe_split;

typedef struct smoe_config smoe_config;
typedef struct smoe_model smoe_model;
typedef struct smoe_dataset smoe_dataset;

typedef struct smoe_step_log {
    size_t step;
    double disp;
    double blc;
    double usage;
    double total;
    double kept_ratio_lora;
    double kept_ratio_adapter;
    double learning_rate;
} smoe_step_log;

typedef struct smoe_metrics {
    size_t samples;
    size_t valid_pixels;
    double epe;
    double bad1;
    double bad2;
    double bad3;
    double kept_ratio_lora;
    double kept_ratio_adapter;
    double kept_ratio;
    double activated_count;
    uint64_t macs_per_view;
} smoe_metrics;

typedef struct smoe_sweep_row {
    double gamma;
    double epe;
    double kept_ratio_lora;
    double kept_ratio_adapter;
    double activated_count;
} smoe_sweep_row;

/* Called after every optimiser step. Return nonzero to keep going; zero
 * stops training early with SMOE_OK. */
typedef int (*smoe_step_callback)(const smoe_step_log* log, void* user);

SMOE_API const char* smoe_version(void);
SMOE_API const char* smoe_last_error(void);
SMOE_API const char* smoe_status_name(smoe_status status);
/* Releases strings returned through char** out-parameters. */
SMOE_API void smoe_string_free(char* s);

/* -- configuration -------------------------------------------------------- */

SMOE_API smoe_status smoe_config_create(smoe_config** out);
SMOE_API smoe_status smoe_config_load(const char* path, smoe_config** out);
SMOE_API smoe_status smoe_config_from_json(const char* json, smoe_config** out);
/* Applies the keys of a JSON object on top of the current values. The
 * config is unchanged when the result would be invalid. */
SMOE_API smoe_status smoe_config_merge_json(smoe_config* config, const char* json);
SMOE_API smoe_status smoe_config_to_json(const smoe_config* config, char** out_json);
SMOE_API smoe_status smoe_config_save(const smoe_config* config, const char* path);
SMOE_API smoe_status smoe_config_copy(const smoe_config* config, smoe_config** out);
SMOE_API void smoe_config_free(smoe_config* config);

/* -- datasets ------------------------------------------------------------- */

/* dataset_size samples from the config's data_seed and generator settings. */
SMOE_API smoe_status smoe_dataset_generate(const smoe_config* config, smoe_dataset** out);
SMOE_API smoe_status smoe_dataset_load(const char* dir, smoe_dataset** out);
SMOE_API smoe_status smoe_dataset_save(const smoe_dataset* dataset, const char* dir);
SMOE_API size_t smoe_dataset_size(const smoe_dataset* dataset);
SMOE_API void smoe_dataset_free(smoe_dataset* dataset);

/* -- models --------------------------------------------------------------- */

/* Seeded initialisation, plus the pretrained backbone when the config names one. */
SMOE_API smoe_status smoe_model_create(const smoe_config* config, smoe_model** out);
SMOE_API smoe_status smoe_model_load(const char* path, smoe_model** out);
SMOE_API smoe_status smoe_model_save(const smoe_model* model, const char* path);
/* Copy of the config the model was built or trained with. */
SMOE_API smoe_status smoe_model_config(const smoe_model* model, smoe_config** out);
SMOE_API void smoe_model_free(smoe_model* model);

/* Trains on the train split of `dataset` (a fresh dataset from the config
 * when NULL). `loss_csv` may be NULL. */
SMOE_API smoe_status smoe_train(smoe_model* model, const smoe_dataset* dataset, const char* loss_csv,
                                smoe_step_callback callback, void* user);

/* Masked-patch reconstruction of the backbone on the train split.
 * `log_csv` (step,loss) may be NULL. */
SMOE_API smoe_status smoe_pretrain(smoe_model* model, const smoe_dataset* dataset, const char* log_csv);

/* Writes metrics.json, metrics.csv and activation.csv to `out_dir` when it
 * is not NULL. `out` may be NULL. */
SMOE_API smoe_status smoe_evaluate(const smoe_model* model, const smoe_dataset* dataset, smoe_split split,
                                   smoe_mode mode, const char* out_dir, smoe_metrics* out);

/* activation.csv and trace.csv in `out_dir`. */
SMOE_API smoe_status smoe_inspect(const smoe_model* model, const smoe_dataset* dataset, smoe_split split,
                                  const char* out_dir);

/* One train + evaluate per gamma. `rows` receives `count` entries sorted by
 * gamma; `out_dir` (sweep.csv plus one folder per gamma) may be NULL. */
SMOE_API smoe_status smoe_sweep(const smoe_config* config, const double* gammas, size_t count,
                                const smoe_dataset* dataset, const char* out_dir, smoe_sweep_row* rows);

#ifdef __cplusplus
}
#endif

#endif /* SMOE_SMOE_H */
