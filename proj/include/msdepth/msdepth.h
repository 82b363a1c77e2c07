/* C interface of the multi-spectral depth library. Every function returns a
 * status; on failure msd_last_error() describes the problem (thread-local,
 * valid until the next call on the same thread). Handles are opaque and must be
 * released with their matching free function. */
#ifndef MSDEPTH_H
#define MSDEPTH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MSD_API __declspec(dllexport)
#else
#define MSD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum msd_status {
  MSD_OK = 0,
  MSD_ERR_INVALID_ARGUMENT = 1, /* null pointer, bad enum value, buffer too small */
  MSD_ERR_CONFIG = 2,
  MSD_ERR_CONTRACT = 3, /* frozen backbone modified, training diverged */
  MSD_ERR_CORRUPTION = 4, /* damaged checkpoint, provenance mismatch */
  MSD_ERR_CALIBRATION = 5,
  MSD_ERR_DOMAIN = 6,
  MSD_ERR_INTERFACE = 7, /* shape or stage mismatch */
  MSD_ERR_IO = 8,
  MSD_ERR_INTERNAL = 9
} msd_status;

typedef enum msd_spectrum { MSD_RGB = 0, MSD_NIR = 1, MSD_THR = 2 } msd_spectrum;

typedef enum msd_condition { MSD_DAY = 0, MSD_NIGHT = 1, MSD_RAIN = 2, MSD_ALL_CONDITIONS = -1 } msd_condition;

typedef enum msd_eval_mode { MSD_PER_SPECTRUM = 0, MSD_FUSED = 1 } msd_eval_mode;

typedef struct msd_config msd_config;
typedef struct msd_model msd_model;
typedef struct msd_reports msd_reports;

typedef struct msd_metrics {
  char modality[16];
  char condition[16];
  double abs_rel, sq_rel, rmse, rmse_log, d1, d2, d3;
  int64_t n_pixels;
} msd_metrics;

typedef struct msd_train_summary {
  int best_epoch;
  int64_t steps;
  double best_val_rmse;
  double val_shared_cosine; /* align stage */
  double val_consistency;   /* fuse stage */
} msd_train_summary;

/* Receives progress lines; may be NULL. */
typedef void (*msd_log_fn)(const char* line, void* user);

MSD_API const char* msd_last_error(void);
MSD_API const char* msd_status_name(msd_status status);
MSD_API const char* msd_version(void);

/* Configuration */
MSD_API msd_status msd_config_default(msd_config** out);
MSD_API msd_status msd_config_load(const char* path, msd_config** out);
MSD_API msd_status msd_config_from_json(const char* json, msd_config** out);
MSD_API msd_status msd_config_set_seed(msd_config* cfg, uint64_t seed);
/* Writes the canonical JSON into buf (NUL-terminated) when it fits; *needed gets the size including the NUL. */
MSD_API msd_status msd_config_to_json(const msd_config* cfg, char* buf, size_t cap, size_t* needed);
MSD_API void msd_config_free(msd_config* cfg);

/* Pipeline */
MSD_API msd_status msd_generate_data(const msd_config* cfg, const char* out_dir);
MSD_API msd_status msd_train_align(const msd_config* cfg, const char* out_dir, msd_log_fn log, void* user,
                                   msd_train_summary* summary);
MSD_API msd_status msd_train_fuse(const msd_config* cfg, const char* align_ckpt, const char* out_dir,
                                  msd_log_fn log, void* user, msd_train_summary* summary);
/* Evaluates on the config's test split, keeping only `split` unless it is MSD_ALL_CONDITIONS.
 * fuse_ckpt may be NULL in per-spectrum mode. */
MSD_API msd_status msd_evaluate(const msd_config* cfg, const char* align_ckpt, const char* fuse_ckpt,
                                msd_eval_mode mode, msd_condition split, msd_log_fn log, void* user,
                                msd_reports** out);

/* Metric reports */
MSD_API msd_status msd_compute_metrics(const float* pred, const float* gt, const uint8_t* valid, size_t n,
                                       double min_depth, double depth_cap, msd_metrics* out);
MSD_API size_t msd_reports_count(const msd_reports* reports);
MSD_API msd_status msd_reports_get(const msd_reports* reports, size_t index, msd_metrics* out);
MSD_API msd_status msd_reports_write_csv(const msd_reports* reports, const char* path);
MSD_API msd_status msd_reports_read_csv(const char* path, msd_reports** out);
/* Writes report.txt, metrics.csv and plots/ into out_dir. */
MSD_API msd_status msd_render_report(const msd_reports* reports, const char* out_dir);
MSD_API void msd_reports_free(msd_reports* reports);

/* Trained models */
MSD_API msd_status msd_model_load(const char* align_ckpt, const char* fuse_ckpt, msd_model** out);
/* Single-spectrum depth for one image: `image` is channels x height x width floats in [0, 1]
 * (3 channels for rgb, 1 otherwise); `depth` receives height x width meters. */
MSD_API msd_status msd_model_predict(msd_model* model, msd_spectrum spectrum, const float* image, int channels,
                                     int height, int width, float* depth);
MSD_API void msd_model_free(msd_model* model);

#ifdef __cplusplus
}
#endif

#endif /* MSDEPTH_H */
