#ifndef DENSETRACK_H
#define DENSETRACK_H

/* C interface to the densetrack core. Every call returns a dt_status; on
 * failure dt_last_error() describes the most recent error of the calling
 * thread. Handles are opaque and released with the matching *_free call. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DT_API __declspec(dllexport)
#else
#define DT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dt_status {
  DT_OK = 0,
  DT_ERR_INVALID_ARGUMENT = 1,
  DT_ERR_IO = 2,
  DT_ERR_NUMERIC = 3,
  DT_ERR_CONFIG = 4,
  DT_ERR_STATE = 5,
  DT_ERR_GEOMETRY = 6,
  DT_ERR_OUT_OF_MEMORY = 7,
  DT_ERR_INTERNAL = 8
} dt_status;

typedef struct dt_scene dt_scene;
typedef struct dt_model dt_model;

DT_API const char* dt_version(void);
/* Message of the last failed call on this thread; "" when none. */
DT_API const char* dt_last_error(void);
DT_API const char* dt_status_name(dt_status status);

/* Scenes. `scene_config_json` uses the scene keys of the run config. */
DT_API dt_status dt_scene_generate(const char* scene_config_json, dt_scene** out);
DT_API dt_status dt_scene_load_bundle(const char* dir, dt_scene** out);
DT_API dt_status dt_scene_save_bundle(const dt_scene* scene, const char* dir);
DT_API dt_status dt_scene_info(const dt_scene* scene, int* frames, int* height, int* width);
/* Ground-truth pointmap of `frame` in frame-0 coordinates: H*W*3 doubles and
 * H*W validity bytes; either output may be NULL. */
DT_API dt_status dt_scene_pointmap(const dt_scene* scene, int frame, double* points, uint8_t* valid);
DT_API void dt_scene_free(dt_scene* scene);

/* Models. An empty or NULL config uses the defaults. */
DT_API dt_status dt_model_create(const char* model_config_json, dt_model** out);
DT_API dt_status dt_model_load(const char* checkpoint_path, dt_model** out);
DT_API dt_status dt_model_save(const dt_model* model, const char* checkpoint_path);
DT_API dt_status dt_model_parameter_count(const dt_model* model, size_t* count);
/* Dense prediction for all frames with query frame `query`. Buffers hold
 * N*H*W*3 floats each; `motion` may be NULL. */
DT_API dt_status dt_model_predict(const dt_model* model, const dt_scene* scene, int query, float* points,
                                  float* motion);
DT_API void dt_model_free(dt_model* model);

/* Metrics over n matched 3D positions (n*3 doubles each). */
DT_API dt_status dt_metrics_apd(const double* predicted, const double* ground_truth, size_t n,
                                const double* thresholds, size_t n_thresholds, double* apd_percent,
                                double* scale);
DT_API dt_status dt_metrics_epe(const double* predicted, const double* ground_truth, size_t n, double* epe);

/* Command runners used by the CLI. */
typedef struct dt_run_options {
  const char* config_path;
  const char* out_dir;
  int has_seed;
  uint64_t seed;
  int deterministic;
} dt_run_options;

DT_API dt_status dt_run_gen_data(const dt_run_options* opt);

typedef struct dt_train_options {
  const char* resume_from; /* NULL or "" for a fresh run */
  long long stop_after;    /* < 0: run to completion */
} dt_train_options;

DT_API dt_status dt_run_train(const dt_run_options* opt, const dt_train_options* train);

typedef enum dt_eval_mode { DT_EVAL_TRACKING = 0, DT_EVAL_RECONSTRUCTION = 1 } dt_eval_mode;
typedef enum dt_scale_mode { DT_SCALE_FROM_CONFIG = 0, DT_SCALE_PER_SEQUENCE = 1, DT_SCALE_GLOBAL = 2 } dt_scale_mode;

typedef struct dt_eval_options {
  dt_eval_mode mode;
  const char* checkpoint;
  int oracle;
  int zero_motion;
  dt_scale_mode scale_mode;
  int has_depth_filter;
  double depth_min;
  double depth_max;
  int literal_apd;
  const char* data_dir;
} dt_eval_options;

/* Mean APD / EPE of the first summary row, when the pointers are non-NULL. */
DT_API dt_status dt_run_eval(const dt_run_options* opt, const dt_eval_options* eval, double* apd, double* epe);

DT_API dt_status dt_run_bench_mem(const dt_run_options* opt, const long long* query_counts, size_t n_counts);

typedef struct dt_render_options {
  const char* checkpoint;
  int oracle;
  const char* data_dir;
  int scene;
  int query;
} dt_render_options;

DT_API dt_status dt_run_render(const dt_run_options* opt, const dt_render_options* render);

#ifdef __cplusplus
}
#endif

#endif /* DENSETRACK_H */
