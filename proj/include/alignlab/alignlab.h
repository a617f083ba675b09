/* alignlab: synthetic multi-appearance segmentation data, feature-alignment
 * training and evaluation. Plain C interface over the C++ core.
 *
 * Every function returning alignlab_status leaves a message retrievable with
 * alignlab_last_error() (per thread) when it fails. Handles are opaque and
 * owned by the caller; pass them to the matching destroy/close function. */
#ifndef ALIGNLAB_ALIGNLAB_H
#define ALIGNLAB_ALIGNLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ALIGNLAB_API __declspec(dllexport)
#else
#define ALIGNLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum alignlab_status {
  ALIGNLAB_OK = 0,
  ALIGNLAB_E_USAGE = 1,   /* bad argument, unknown config key or value */
  ALIGNLAB_E_DATA = 2,    /* missing/corrupt files, shape mismatches */
  ALIGNLAB_E_NUMERIC = 3, /* non-finite values during training */
  ALIGNLAB_E_INTERNAL = 4
} alignlab_status;

typedef struct alignlab_dataset alignlab_dataset;
typedef struct alignlab_config alignlab_config;
typedef struct alignlab_model alignlab_model;

ALIGNLAB_API const char* alignlab_version(void);
ALIGNLAB_API const char* alignlab_last_error(void);

/* Writes layouts [0, layouts) under the four training appearances (and the
 * held-out dusk appearance when include_unseen != 0) to out_dir. */
ALIGNLAB_API alignlab_status alignlab_generate(uint64_t seed, int layouts, int width, int height, int include_unseen,
                                               const char* out_dir);

ALIGNLAB_API alignlab_status alignlab_dataset_open(const char* dir, alignlab_dataset** out);
ALIGNLAB_API void alignlab_dataset_close(alignlab_dataset* ds);
ALIGNLAB_API alignlab_status alignlab_dataset_size(const alignlab_dataset* ds, size_t* out);
ALIGNLAB_API alignlab_status alignlab_dataset_shape(const alignlab_dataset* ds, int* width, int* height);
/* Copies width*height label bytes of entry `index`. */
ALIGNLAB_API alignlab_status alignlab_dataset_labels(const alignlab_dataset* ds, size_t index, uint8_t* buf, size_t len);
/* Copies width*height*3 interleaved RGB bytes. */
ALIGNLAB_API alignlab_status alignlab_dataset_rgb(const alignlab_dataset* ds, size_t index, int appearance, uint8_t* buf,
                                                  size_t len);

ALIGNLAB_API alignlab_status alignlab_config_create(alignlab_config** out);
ALIGNLAB_API alignlab_status alignlab_config_load(const char* path, alignlab_config** out);
ALIGNLAB_API alignlab_status alignlab_config_set(alignlab_config* cfg, const char* key, const char* value);
/* Writes the value as a NUL-terminated string; fails with ALIGNLAB_E_USAGE if len is too small. */
ALIGNLAB_API alignlab_status alignlab_config_get(const alignlab_config* cfg, const char* key, char* buf, size_t len);
ALIGNLAB_API void alignlab_config_destroy(alignlab_config* cfg);

/* Trains per cfg. `source` may be NULL, in which case the source split is
 * generated from the data.* keys. Writes model.ckpt, train_log.csv and
 * run.json (plus teacher.ckpt in uda mode) to out_dir. */
ALIGNLAB_API alignlab_status alignlab_train(const alignlab_config* cfg, const alignlab_dataset* source,
                                            const char* out_dir);

ALIGNLAB_API alignlab_status alignlab_model_load(const char* path, alignlab_model** out);
ALIGNLAB_API alignlab_status alignlab_model_init(uint64_t seed, alignlab_model** out);
ALIGNLAB_API alignlab_status alignlab_model_save(const alignlab_model* model, const char* path);
ALIGNLAB_API void alignlab_model_destroy(alignlab_model* model);
/* rgb: width*height*3 interleaved bytes; labels_out: width*height bytes. */
ALIGNLAB_API alignlab_status alignlab_model_predict(const alignlab_model* model, const uint8_t* rgb, int width,
                                                    int height, uint8_t* labels_out);

/* split: "all", "unseen" or "a0".."a4". csv_path / txt_path may be NULL;
 * miou / macc may be NULL. Scores are fractions in [0, 1]. */
ALIGNLAB_API alignlab_status alignlab_evaluate(const alignlab_model* model, const alignlab_dataset* ds,
                                               const char* split, const char* csv_path, const char* txt_path,
                                               double* miou, double* macc);

/* axis: appearance | metric | blocks | dataset_size. values: comma separated
 * list or NULL for the axis defaults. Writes results.csv and report.svg. */
ALIGNLAB_API alignlab_status alignlab_ablate(const alignlab_config* base, const char* axis, const char* values,
                                             int seeds, int threads, const char* out_dir);

/* Regenerates the SVG chart from a results CSV. */
ALIGNLAB_API alignlab_status alignlab_report(const char* csv_path, const char* svg_path);

#ifdef __cplusplus
}
#endif

#endif
