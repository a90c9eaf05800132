#include "densetrack/densetrack.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "densetrack/checkpoint.hpp"
#include "densetrack/config.hpp"
#include "densetrack/error.hpp"
#include "densetrack/harness.hpp"
#include "densetrack/io.hpp"
#include "densetrack/metrics.hpp"
#include "densetrack/model.hpp"

struct dt_scene {
  densetrack::synth::SceneSample sample;
};

struct dt_model {
  explicit dt_model(densetrack::model::Model m) : model(std::move(m)) {}
  densetrack::model::Model model;
};

namespace {

using namespace densetrack;

thread_local std::string g_last_error;

dt_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument: return DT_ERR_INVALID_ARGUMENT;
    case ErrorCode::kIo: return DT_ERR_IO;
    case ErrorCode::kNumeric: return DT_ERR_NUMERIC;
    case ErrorCode::kConfig: return DT_ERR_CONFIG;
    case ErrorCode::kState: return DT_ERR_STATE;
    case ErrorCode::kGeometry: return DT_ERR_GEOMETRY;
  }
  return DT_ERR_INTERNAL;
}

// Runs `fn` and converts any exception into a status plus message.
template <typename Fn>
dt_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return DT_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DT_ERR_OUT_OF_MEMORY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DT_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) { require(p != nullptr, std::string(what) + " must not be NULL"); }

std::string str_or_empty(const char* s) { return s ? s : ""; }

harness::RunOptions run_options(const dt_run_options* opt) {
  need(opt, "run options");
  harness::RunOptions r;
  r.config_path = str_or_empty(opt->config_path);
  r.out_dir = str_or_empty(opt->out_dir);
  if (opt->has_seed) r.seed = opt->seed;
  r.deterministic = opt->deterministic != 0;
  return r;
}

metrics::TrackSet track_set(const double* predicted, const double* ground_truth, size_t n) {
  need(predicted, "predicted");
  need(ground_truth, "ground_truth");
  metrics::TrackSet t;
  for (size_t i = 0; i < n; ++i) {
    t.predicted.emplace_back(predicted[3 * i], predicted[3 * i + 1], predicted[3 * i + 2]);
    t.ground_truth.emplace_back(ground_truth[3 * i], ground_truth[3 * i + 1], ground_truth[3 * i + 2]);
  }
  return t;
}

}  // namespace

extern "C" {

const char* dt_version(void) { return harness::kVersion; }

const char* dt_last_error(void) { return g_last_error.c_str(); }

const char* dt_status_name(dt_status status) {
  switch (status) {
    case DT_OK: return "ok";
    case DT_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DT_ERR_IO: return "i/o error";
    case DT_ERR_NUMERIC: return "numeric error";
    case DT_ERR_CONFIG: return "config error";
    case DT_ERR_STATE: return "state error";
    case DT_ERR_GEOMETRY: return "geometry error";
    case DT_ERR_OUT_OF_MEMORY: return "out of memory";
    case DT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

dt_status dt_scene_generate(const char* scene_config_json, dt_scene** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    const auto cfg = config::scene_config_from_json(str_or_empty(scene_config_json).empty() ? "{}" : scene_config_json);
    *out = new dt_scene{synth::generate_scene(cfg)};
  });
}

dt_status dt_scene_load_bundle(const char* dir, dt_scene** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = nullptr;
    *out = new dt_scene{io::load_scene_bundle(dir)};
  });
}

dt_status dt_scene_save_bundle(const dt_scene* scene, const char* dir) {
  return guarded([&] {
    need(scene, "scene");
    need(dir, "dir");
    io::write_scene_bundle(dir, scene->sample);
  });
}

dt_status dt_scene_info(const dt_scene* scene, int* frames, int* height, int* width) {
  return guarded([&] {
    need(scene, "scene");
    if (frames) *frames = scene->sample.num_frames();
    if (height) *height = scene->sample.height;
    if (width) *width = scene->sample.width;
  });
}

dt_status dt_scene_pointmap(const dt_scene* scene, int frame, double* points, uint8_t* valid) {
  return guarded([&] {
    need(scene, "scene");
    require(frame >= 0 && frame < scene->sample.num_frames(), "frame index out of range");
    const auto& pm = scene->sample.gt_pointmaps[static_cast<size_t>(frame)];
    if (points) std::memcpy(points, pm.data.data(), pm.data.size() * sizeof(double));
    if (valid) std::memcpy(valid, pm.valid.data(), pm.valid.size());
  });
}

void dt_scene_free(dt_scene* scene) { delete scene; }

dt_status dt_model_create(const char* model_config_json, dt_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    const std::string text = str_or_empty(model_config_json);
    const auto cfg = config::model_config_from_json(text.empty() ? "{}" : text);
    *out = new dt_model(model::Model(cfg));
  });
}

dt_status dt_model_load(const char* checkpoint_path, dt_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = nullptr;
    *out = new dt_model(checkpoint::load_model(checkpoint_path));
  });
}

dt_status dt_model_save(const dt_model* model, const char* checkpoint_path) {
  return guarded([&] {
    need(model, "model");
    need(checkpoint_path, "checkpoint_path");
    checkpoint::save_model(checkpoint_path, model->model);
  });
}

dt_status dt_model_parameter_count(const dt_model* model, size_t* count) {
  return guarded([&] {
    need(model, "model");
    need(count, "count");
    *count = model->model.params().count();
  });
}

dt_status dt_model_predict(const dt_model* model, const dt_scene* scene, int query, float* points, float* motion) {
  return guarded([&] {
    need(model, "model");
    need(scene, "scene");
    need(points, "points");
    require(query >= 0 && query < scene->sample.num_frames(), "query frame out of range");
    model::ForwardOptions opt;
    opt.query = query;
    const PredictionBundle b = model->model.predict(model::make_input(scene->sample), opt);
    std::memcpy(points, b.points.data(), b.points.size() * sizeof(float));
    if (motion) {
      require(!b.motion.empty(), "the model has no motion head", ErrorCode::kState);
      std::memcpy(motion, b.motion.data(), b.motion.size() * sizeof(float));
    }
  });
}

void dt_model_free(dt_model* model) { delete model; }

dt_status dt_metrics_apd(const double* predicted, const double* ground_truth, size_t n, const double* thresholds,
                         size_t n_thresholds, double* apd_percent, double* scale) {
  return guarded([&] {
    need(apd_percent, "apd_percent");
    const auto t = track_set(predicted, ground_truth, n);
    std::vector<double> th = metrics::default_thresholds();
    if (thresholds) th.assign(thresholds, thresholds + n_thresholds);
    const auto r = metrics::apd(t, th);
    *apd_percent = r.apd;
    if (scale) *scale = r.scale;
  });
}

dt_status dt_metrics_epe(const double* predicted, const double* ground_truth, size_t n, double* epe) {
  return guarded([&] {
    need(epe, "epe");
    *epe = metrics::epe(track_set(predicted, ground_truth, n));
  });
}

dt_status dt_run_gen_data(const dt_run_options* opt) {
  return guarded([&] { harness::gen_data(run_options(opt)); });
}

dt_status dt_run_train(const dt_run_options* opt, const dt_train_options* train) {
  return guarded([&] {
    harness::TrainRunOptions t;
    if (train) {
      t.resume_from = str_or_empty(train->resume_from);
      t.stop_after = train->stop_after;
    }
    harness::train(run_options(opt), t);
  });
}

dt_status dt_run_eval(const dt_run_options* opt, const dt_eval_options* eval, double* apd, double* epe) {
  return guarded([&] {
    need(eval, "eval options");
    harness::EvalOptions e;
    e.mode = eval->mode == DT_EVAL_RECONSTRUCTION ? harness::EvalMode::kReconstruction : harness::EvalMode::kTracking;
    e.checkpoint = str_or_empty(eval->checkpoint);
    e.oracle = eval->oracle != 0;
    e.zero_motion = eval->zero_motion != 0;
    if (eval->scale_mode == DT_SCALE_PER_SEQUENCE) e.scale_mode = config::ScaleMode::kPerSequence;
    if (eval->scale_mode == DT_SCALE_GLOBAL) e.scale_mode = config::ScaleMode::kGlobal;
    if (eval->has_depth_filter) {
      require(eval->depth_min < eval->depth_max, "depth filter needs min < max");
      e.depth_filter = std::make_pair(eval->depth_min, eval->depth_max);
    }
    e.literal_apd = eval->literal_apd != 0;
    e.data_dir = str_or_empty(eval->data_dir);
    const auto rows = harness::eval(run_options(opt), e);
    // Summary rows come last; report the first of them.
    const harness::MetricRecord* first = nullptr;
    for (const auto& r : rows) {
      if (r.sequence == "mean" || r.sequence == "all") {
        first = &r;
        break;
      }
    }
    if (first && apd) *apd = first->apd;
    if (first && epe) *epe = first->epe;
  });
}

dt_status dt_run_bench_mem(const dt_run_options* opt, const long long* query_counts, size_t n_counts) {
  return guarded([&] {
    harness::BenchOptions b;
    if (query_counts && n_counts > 0) b.query_counts = std::vector<long long>(query_counts, query_counts + n_counts);
    harness::bench_mem(run_options(opt), b);
  });
}

dt_status dt_run_render(const dt_run_options* opt, const dt_render_options* render) {
  return guarded([&] {
    need(render, "render options");
    harness::RenderOptions r;
    r.checkpoint = str_or_empty(render->checkpoint);
    r.oracle = render->oracle != 0;
    r.data_dir = str_or_empty(render->data_dir);
    r.scene = render->scene;
    r.query = render->query;
    harness::render(run_options(opt), r);
  });
}

}  // extern "C"
