#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "densetrack/densetrack.h"

namespace fs = std::filesystem;

namespace {

const char* kScene = R"({"num_frames": 3, "height": 16, "width": 16, "patch_size": 4, "num_spheres": 2,
  "speed_min": 0.15, "speed_max": 0.25, "camera": "orbit", "camera_speed": 0.03, "seed": 4})";

const char* kModel = R"({"height": 16, "width": 16, "patch_size": 4, "dim": 16, "heads": 2, "block_pairs": 2,
  "taps": [1, 3], "head_channels": 8, "camera_head_layers": 1, "max_frames": 4, "init_seed": 2})";

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("densetrack_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_run_config(const fs::path& dir) {
  const std::string scene = kScene;
  const std::string text = std::string(R"({"seed": 3, "model": )") + kModel +
                           R"(, "datasets": [{"name": "d", "scenes": 1, "seed": 8, "min_length": 2, "max_length": 3, "scene": )" +
                           scene +
                           R"(}], "eval": {"datasets": [{"name": "e", "scenes": 2, "seed": 9, "min_length": 3, "max_length": 3, "scene": )" +
                           scene + R"(}]}, "train": {"phase1": {"steps": 2, "warmup": 1}, "phase2": {"steps": 2, "warmup": 1}},
  "bench": {"frames": 3, "model": )" + kModel + R"(, "query_counts": [0, 16]}})";
  const auto path = dir / "config.json";
  std::ofstream(path) << text;
  return path.string();
}

}  // namespace

TEST_CASE("C API: status names, version and error reporting") {
  CHECK(std::string(dt_version()).size() > 0);
  CHECK(std::string(dt_status_name(DT_OK)) == "ok");
  CHECK(std::string(dt_status_name(DT_ERR_OUT_OF_MEMORY)) == "out of memory");
  dt_scene* s = nullptr;
  CHECK(dt_scene_generate(R"({"height": 15, "patch_size": 4})", &s) != DT_OK);
  CHECK(s == nullptr);
  CHECK(std::string(dt_last_error()).size() > 0);
  CHECK(dt_scene_generate("{not json", &s) != DT_OK);
  CHECK(dt_scene_info(nullptr, nullptr, nullptr, nullptr) == DT_ERR_INVALID_ARGUMENT);
  CHECK(dt_model_load("/nonexistent/model.ckpt", nullptr) == DT_ERR_INVALID_ARGUMENT);
  dt_model* m = nullptr;
  CHECK(dt_model_load("/nonexistent/model.ckpt", &m) == DT_ERR_IO);
}

TEST_CASE("C API: scenes, models and metrics through opaque handles") {
  dt_scene* scene = nullptr;
  REQUIRE(dt_scene_generate(kScene, &scene) == DT_OK);
  int frames = 0, h = 0, w = 0;
  REQUIRE(dt_scene_info(scene, &frames, &h, &w) == DT_OK);
  CHECK((frames == 3 && h == 16 && w == 16));
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<double> points(hw * 3);
  std::vector<uint8_t> valid(hw);
  REQUIRE(dt_scene_pointmap(scene, 1, points.data(), valid.data()) == DT_OK);
  CHECK(dt_scene_pointmap(scene, 3, points.data(), valid.data()) == DT_ERR_INVALID_ARGUMENT);

  const auto dir = fresh("handles");
  REQUIRE(dt_scene_save_bundle(scene, (dir / "bundle").string().c_str()) == DT_OK);
  dt_scene* loaded = nullptr;
  REQUIRE(dt_scene_load_bundle((dir / "bundle").string().c_str(), &loaded) == DT_OK);
  std::vector<double> points2(hw * 3);
  REQUIRE(dt_scene_pointmap(loaded, 1, points2.data(), nullptr) == DT_OK);
  CHECK(points2 == points);

  dt_model* model = nullptr;
  REQUIRE(dt_model_create(kModel, &model) == DT_OK);
  size_t count = 0;
  REQUIRE(dt_model_parameter_count(model, &count) == DT_OK);
  CHECK(count > 1000);
  std::vector<float> pred(frames * hw * 3), motion(frames * hw * 3), pred2(frames * hw * 3);
  REQUIRE(dt_model_predict(model, scene, 2, pred.data(), motion.data()) == DT_OK);
  CHECK(dt_model_predict(model, scene, 3, pred.data(), nullptr) == DT_ERR_INVALID_ARGUMENT);
  const std::string ckpt = (dir / "m.ckpt").string();
  REQUIRE(dt_model_save(model, ckpt.c_str()) == DT_OK);
  dt_model* model2 = nullptr;
  REQUIRE(dt_model_load(ckpt.c_str(), &model2) == DT_OK);
  REQUIRE(dt_model_predict(model2, scene, 2, pred2.data(), nullptr) == DT_OK);
  CHECK(pred2 == pred);

  // Metrics on the valid ground-truth points against themselves, doubled.
  std::vector<double> gt, twice;
  for (size_t p = 0; p < hw; ++p) {
    if (!valid[p]) continue;
    for (int c = 0; c < 3; ++c) {
      gt.push_back(points[p * 3 + c]);
      twice.push_back(2.0 * points[p * 3 + c]);
    }
  }
  double apd = 0.0, scale = 0.0, epe = 1.0;
  REQUIRE(dt_metrics_apd(twice.data(), gt.data(), gt.size() / 3, nullptr, 0, &apd, &scale) == DT_OK);
  CHECK(apd == 100.0);
  CHECK(scale == doctest::Approx(0.5).epsilon(1e-15));
  REQUIRE(dt_metrics_epe(twice.data(), gt.data(), gt.size() / 3, &epe) == DT_OK);
  CHECK(epe <= 1e-9);
  const double bad_thresholds[2] = {0.5, 0.1};
  CHECK(dt_metrics_apd(twice.data(), gt.data(), gt.size() / 3, bad_thresholds, 2, &apd, nullptr) == DT_ERR_INVALID_ARGUMENT);
  CHECK(dt_metrics_epe(twice.data(), gt.data(), 0, &epe) == DT_ERR_INVALID_ARGUMENT);

  dt_model_free(model2);
  dt_model_free(model);
  dt_scene_free(loaded);
  dt_scene_free(scene);
  dt_scene_free(nullptr);
}

TEST_CASE("C API: command runners") {
  const auto dir = fresh("runners");
  const std::string config = write_run_config(dir);
  const std::string out = (dir / "out").string();
  dt_run_options o{};
  o.config_path = config.c_str();
  o.out_dir = out.c_str();
  o.deterministic = 1;

  REQUIRE(dt_run_gen_data(&o) == DT_OK);
  dt_train_options t{nullptr, -1};
  REQUIRE(dt_run_train(&o, &t) == DT_OK);
  CHECK(fs::exists(dir / "out" / "final.ckpt"));
  CHECK(fs::exists(dir / "out" / "loss_curve.png"));

  dt_eval_options e{};
  e.oracle = 1;
  double apd = 0.0, epe = 1.0;
  REQUIRE(dt_run_eval(&o, &e, &apd, &epe) == DT_OK);
  CHECK(apd == 100.0);
  CHECK(epe <= 1e-6);
  const std::string ckpt = (dir / "out" / "final.ckpt").string();
  e.oracle = 0;
  e.checkpoint = ckpt.c_str();
  REQUIRE(dt_run_eval(&o, &e, &apd, &epe) == DT_OK);
  CHECK(apd >= 0.0);
  e.oracle = 1;
  CHECK(dt_run_eval(&o, &e, &apd, &epe) == DT_ERR_INVALID_ARGUMENT);

  const long long counts[2] = {0, 32};
  REQUIRE(dt_run_bench_mem(&o, counts, 2) == DT_OK);
  CHECK(fs::exists(dir / "out" / "bench_memory.jsonl"));

  dt_render_options r{ckpt.c_str(), 0, nullptr, 0, 1};
  REQUIRE(dt_run_render(&o, &r) == DT_OK);
  CHECK(fs::exists(dir / "out" / "trajectories.png"));

  dt_run_options missing = o;
  missing.config_path = "/nonexistent/config.json";
  CHECK(dt_run_gen_data(&missing) != DT_OK);
  CHECK(dt_run_gen_data(nullptr) == DT_ERR_INVALID_ARGUMENT);
}
