#include "densetrack/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "densetrack/error.hpp"

namespace densetrack::config {

using nlohmann::json;

namespace {

// Reads optional fields from one JSON object and rejects keys it never saw,
// so typos in config files surface as errors instead of silent defaults.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(ErrorCode::kConfig, where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

model::ModelConfig read_model(const json& j, const std::string& where) {
  model::ModelConfig m;
  Reader r(j, where);
  r.get("height", m.height);
  r.get("width", m.width);
  r.get("patch_size", m.patch_size);
  r.get("dim", m.dim);
  r.get("block_pairs", m.block_pairs);
  r.get("heads", m.heads);
  r.get("mlp_ratio", m.mlp_ratio);
  r.get("taps", m.taps);
  r.get("head_channels", m.head_channels);
  r.get("camera_head_layers", m.camera_head_layers);
  r.get("max_frames", m.max_frames);
  r.get("intrinsic_embedding", m.intrinsic_embedding);
  r.get("query_embedding", m.query_embedding);
  r.get("motion_head", m.motion_head);
  r.get("init_seed", m.init_seed);
  r.finish();
  return m;
}

json write_model(const model::ModelConfig& m) {
  return {{"height", m.height},
          {"width", m.width},
          {"patch_size", m.patch_size},
          {"dim", m.dim},
          {"block_pairs", m.block_pairs},
          {"heads", m.heads},
          {"mlp_ratio", m.mlp_ratio},
          {"taps", m.taps},
          {"head_channels", m.head_channels},
          {"camera_head_layers", m.camera_head_layers},
          {"max_frames", m.max_frames},
          {"intrinsic_embedding", m.intrinsic_embedding},
          {"query_embedding", m.query_embedding},
          {"motion_head", m.motion_head},
          {"init_seed", m.init_seed}};
}

synth::SceneConfig read_scene(const json& j, const std::string& where) {
  synth::SceneConfig s;
  Reader r(j, where);
  std::string camera = synth::to_string(s.camera);
  r.get("num_frames", s.num_frames);
  r.get("height", s.height);
  r.get("width", s.width);
  r.get("patch_size", s.patch_size);
  r.get("num_spheres", s.num_spheres);
  r.get("radius_min", s.radius_min);
  r.get("radius_max", s.radius_max);
  r.get("speed_min", s.speed_min);
  r.get("speed_max", s.speed_max);
  r.get("spin_max", s.spin_max);
  r.get("camera", camera);
  r.get("camera_speed", s.camera_speed);
  r.get("fov_deg", s.fov_deg);
  r.get("ground_plane", s.ground_plane);
  r.get("back_wall", s.back_wall);
  r.get("vertices_per_sphere", s.vertices_per_sphere);
  r.get("seed", s.seed);
  r.finish();
  s.camera = synth::camera_trajectory_from_string(camera);
  return s;
}

json write_scene(const synth::SceneConfig& s) {
  return {{"num_frames", s.num_frames},
          {"height", s.height},
          {"width", s.width},
          {"patch_size", s.patch_size},
          {"num_spheres", s.num_spheres},
          {"radius_min", s.radius_min},
          {"radius_max", s.radius_max},
          {"speed_min", s.speed_min},
          {"speed_max", s.speed_max},
          {"spin_max", s.spin_max},
          {"camera", synth::to_string(s.camera)},
          {"camera_speed", s.camera_speed},
          {"fov_deg", s.fov_deg},
          {"ground_plane", s.ground_plane},
          {"back_wall", s.back_wall},
          {"vertices_per_sphere", s.vertices_per_sphere},
          {"seed", s.seed}};
}

DatasetConfig read_dataset(const json& j, const std::string& where) {
  DatasetConfig d;
  Reader r(j, where);
  r.get("name", d.name);
  r.get("weight", d.weight);
  r.get("scenes", d.scenes);
  r.get("seed", d.seed);
  r.get("has_motion", d.has_motion);
  r.get("min_length", d.min_length);
  r.get("max_length", d.max_length);
  r.get("min_stride", d.min_stride);
  r.get("max_stride", d.max_stride);
  if (const json* s = r.child("scene")) d.scene = read_scene(*s, where + ".scene");
  r.finish();
  return d;
}

json write_dataset(const DatasetConfig& d) {
  return {{"name", d.name},
          {"weight", d.weight},
          {"scenes", d.scenes},
          {"seed", d.seed},
          {"has_motion", d.has_motion},
          {"min_length", d.min_length},
          {"max_length", d.max_length},
          {"min_stride", d.min_stride},
          {"max_stride", d.max_stride},
          {"scene", write_scene(d.scene)}};
}

std::vector<DatasetConfig> read_datasets(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorCode::kConfig, where + ": expected an array");
  std::vector<DatasetConfig> out;
  for (size_t i = 0; i < j.size(); ++i) out.push_back(read_dataset(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

json write_datasets(const std::vector<DatasetConfig>& ds) {
  json a = json::array();
  for (const auto& d : ds) a.push_back(write_dataset(d));
  return a;
}

PhaseConfig read_phase(const json& j, const std::string& where) {
  PhaseConfig p;
  Reader r(j, where);
  r.get("steps", p.steps);
  r.get("warmup", p.warmup);
  r.get("lr_scale", p.lr_scale);
  r.get("checkpoint_every", p.checkpoint_every);
  r.finish();
  return p;
}

json write_phase(const PhaseConfig& p) {
  return {{"steps", p.steps}, {"warmup", p.warmup}, {"lr_scale", p.lr_scale}, {"checkpoint_every", p.checkpoint_every}};
}

TrainConfig read_train(const json& j) {
  TrainConfig t;
  Reader r(j, "train");
  if (const json* p = r.child("phase1")) t.phase1 = read_phase(*p, "train.phase1");
  if (const json* p = r.child("phase2")) t.phase2 = read_phase(*p, "train.phase2");
  if (const json* w = r.child("loss_weights")) {
    Reader lr(*w, "train.loss_weights");
    lr.get("camera", t.weights.camera);
    lr.get("depth", t.weights.depth);
    lr.get("point", t.weights.point);
    lr.get("motion", t.weights.motion);
    lr.get("alpha", t.weights.alpha);
    lr.get("huber_eps", t.weights.huber_eps);
    lr.finish();
  }
  r.get("augment", t.augment);
  if (const json* a = r.child("augmentation")) {
    Reader ar(*a, "train.augmentation");
    ar.get("brightness", t.augmentation.brightness);
    ar.get("contrast", t.augmentation.contrast);
    ar.get("saturation", t.augmentation.saturation);
    ar.get("aspect_min", t.augmentation.aspect_min);
    ar.get("aspect_max", t.augmentation.aspect_max);
    ar.get("scale_min", t.augmentation.scale_min);
    ar.get("scale_max", t.augmentation.scale_max);
    ar.finish();
  }
  r.get("log_every", t.log_every);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_eps", t.adam_eps);
  r.finish();
  return t;
}

json write_train(const TrainConfig& t) {
  const auto& w = t.weights;
  const auto& a = t.augmentation;
  return {{"phase1", write_phase(t.phase1)},
          {"phase2", write_phase(t.phase2)},
          {"loss_weights",
           {{"camera", w.camera},
            {"depth", w.depth},
            {"point", w.point},
            {"motion", w.motion},
            {"alpha", w.alpha},
            {"huber_eps", w.huber_eps}}},
          {"augment", t.augment},
          {"augmentation",
           {{"brightness", a.brightness},
            {"contrast", a.contrast},
            {"saturation", a.saturation},
            {"aspect_min", a.aspect_min},
            {"aspect_max", a.aspect_max},
            {"scale_min", a.scale_min},
            {"scale_max", a.scale_max}}},
          {"log_every", t.log_every},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps}};
}

EvalConfig read_eval(const json& j) {
  EvalConfig e;
  Reader r(j, "eval");
  if (const json* d = r.child("datasets")) e.datasets = read_datasets(*d, "eval.datasets");
  r.get("thresholds", e.thresholds);
  std::string mode = to_string(e.scale_mode);
  r.get("scale_mode", mode);
  e.scale_mode = scale_mode_from_string(mode);
  r.get("scale_on_ground_truth", e.scale_on_ground_truth);
  std::vector<double> filter;
  r.get("depth_filter", filter);
  if (!filter.empty()) {
    if (filter.size() != 2) fail(ErrorCode::kConfig, "eval.depth_filter: expected [min, max]");
    e.depth_filter = std::make_pair(filter[0], filter[1]);
  }
  r.finish();
  return e;
}

json write_eval(const EvalConfig& e) {
  json j = {{"datasets", write_datasets(e.datasets)},
            {"thresholds", e.thresholds},
            {"scale_mode", to_string(e.scale_mode)},
            {"scale_on_ground_truth", e.scale_on_ground_truth}};
  if (e.depth_filter) j["depth_filter"] = {e.depth_filter->first, e.depth_filter->second};
  return j;
}

BenchConfig read_bench(const json& j) {
  BenchConfig b;
  Reader r(j, "bench");
  r.get("frames", b.frames);
  if (const json* m = r.child("model")) b.model = read_model(*m, "bench.model");
  r.get("query_counts", b.query_counts);
  r.get("baseline_dim", b.baseline_dim);
  r.get("baseline_heads", b.baseline_heads);
  r.get("memory_limit_bytes", b.memory_limit_bytes);
  r.finish();
  return b;
}

json write_bench(const BenchConfig& b) {
  return {{"frames", b.frames},
          {"model", write_model(b.model)},
          {"query_counts", b.query_counts},
          {"baseline_dim", b.baseline_dim},
          {"baseline_heads", b.baseline_heads},
          {"memory_limit_bytes", b.memory_limit_bytes}};
}

}  // namespace

void DatasetConfig::validate() const {
  require(!name.empty(), "dataset name is empty", ErrorCode::kConfig);
  require(weight > 0.0, "dataset " + name + ": weight must be positive", ErrorCode::kConfig);
  require(scenes >= 1, "dataset " + name + ": needs at least one scene", ErrorCode::kConfig);
  require(min_length >= 2 && max_length >= min_length, "dataset " + name + ": bad sequence length range",
          ErrorCode::kConfig);
  require(min_stride >= 1 && max_stride >= min_stride, "dataset " + name + ": bad stride range", ErrorCode::kConfig);
  require(scene.num_frames >= min_length, "dataset " + name + ": scenes shorter than the minimum sequence length",
          ErrorCode::kConfig);
  scene.validate();
}

void PhaseConfig::validate() const {
  require(steps >= 0, "phase steps must be non-negative", ErrorCode::kConfig);
  require(warmup >= 0, "phase warmup must be non-negative", ErrorCode::kConfig);
  require(steps == 0 || warmup < steps, "phase warmup must be shorter than the phase", ErrorCode::kConfig);
  require(lr_scale > 0.0, "lr_scale must be positive", ErrorCode::kConfig);
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative", ErrorCode::kConfig);
}

void TrainConfig::validate() const {
  phase1.validate();
  phase2.validate();
  weights.validate();
  augmentation.validate();
  require(log_every >= 1, "log_every must be at least 1", ErrorCode::kConfig);
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)",
          ErrorCode::kConfig);
  require(adam_eps > 0.0, "adam_eps must be positive", ErrorCode::kConfig);
}

const char* to_string(ScaleMode m) { return m == ScaleMode::kGlobal ? "global" : "per-seq"; }

ScaleMode scale_mode_from_string(const std::string& s) {
  if (s == "per-seq") return ScaleMode::kPerSequence;
  if (s == "global") return ScaleMode::kGlobal;
  fail(ErrorCode::kConfig, "unknown scale mode '" + s + "' (expected per-seq or global)");
}

void EvalConfig::validate() const {
  for (const auto& d : datasets) d.validate();
  require(!thresholds.empty(), "eval.thresholds is empty", ErrorCode::kConfig);
  for (size_t i = 0; i < thresholds.size(); ++i) {
    require(thresholds[i] > 0.0 && (i == 0 || thresholds[i] > thresholds[i - 1]),
            "eval.thresholds must be positive and strictly increasing", ErrorCode::kConfig);
  }
  if (depth_filter) {
    require(depth_filter->first >= 0.0 && depth_filter->second > depth_filter->first, "eval.depth_filter: need 0 <= min < max",
            ErrorCode::kConfig);
  }
}

void BenchConfig::validate() const {
  require(frames >= 2 && frames <= model.max_frames, "bench.frames must lie in [2, model.max_frames]", ErrorCode::kConfig);
  model.validate();
  require(!query_counts.empty(), "bench.query_counts is empty", ErrorCode::kConfig);
  for (long long q : query_counts) require(q >= -1, "bench.query_counts: -1 (all pixels) or a count", ErrorCode::kConfig);
  require(baseline_dim > 0 && baseline_heads > 0 && baseline_dim % baseline_heads == 0,
          "bench baseline dim must be a positive multiple of its heads", ErrorCode::kConfig);
}

void RunConfig::validate() const {
  model.validate();
  for (const auto& d : datasets) {
    d.validate();
    require(d.scene.height == model.height && d.scene.width == model.width,
            "dataset " + d.name + ": resolution differs from the model", ErrorCode::kConfig);
    require(d.max_length <= model.max_frames, "dataset " + d.name + ": max_length exceeds model.max_frames",
            ErrorCode::kConfig);
  }
  for (const auto& d : eval.datasets) {
    require(d.scene.height == model.height && d.scene.width == model.width,
            "eval dataset " + d.name + ": resolution differs from the model", ErrorCode::kConfig);
    require(d.scene.num_frames <= model.max_frames, "eval dataset " + d.name + ": too many frames for the model",
            ErrorCode::kConfig);
  }
  train.validate();
  eval.validate();
  bench.validate();
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Reader r(j, "config");
  r.get("seed", cfg.seed);
  if (const json* m = r.child("model")) cfg.model = read_model(*m, "model");
  if (const json* d = r.child("datasets")) cfg.datasets = read_datasets(*d, "datasets");
  if (const json* t = r.child("train")) cfg.train = read_train(*t);
  if (const json* e = r.child("eval")) cfg.eval = read_eval(*e);
  if (const json* b = r.child("bench")) cfg.bench = read_bench(*b);
  r.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& cfg) {
  const json j = {{"seed", cfg.seed},
                  {"model", write_model(cfg.model)},
                  {"datasets", write_datasets(cfg.datasets)},
                  {"train", write_train(cfg.train)},
                  {"eval", write_eval(cfg.eval)},
                  {"bench", write_bench(cfg.bench)}};
  return j.dump(2);
}

std::string to_json(const model::ModelConfig& m) { return write_model(m).dump(); }

std::string to_json(const synth::SceneConfig& s) { return write_scene(s).dump(); }

synth::SceneConfig scene_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("scene config is not valid JSON: ") + e.what());
  }
  synth::SceneConfig s = read_scene(j, "scene");
  s.validate();
  return s;
}

model::ModelConfig model_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("model config is not valid JSON: ") + e.what());
  }
  model::ModelConfig m = read_model(j, "model");
  m.validate();
  return m;
}

std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(to_json(cfg)); }

std::vector<synth::SceneSample> generate_dataset(const DatasetConfig& d) {
  d.validate();
  std::vector<synth::SceneSample> scenes;
  scenes.reserve(static_cast<size_t>(d.scenes));
  for (int i = 0; i < d.scenes; ++i) {
    synth::SceneConfig sc = d.scene;
    sc.seed = mix_seed(d.seed, static_cast<uint64_t>(i));
    scenes.push_back(synth::generate_scene(sc));
  }
  return scenes;
}

synth::DatasetSpec dataset_spec(const DatasetConfig& d, const std::vector<synth::SceneSample>& scenes) {
  synth::DatasetSpec s;
  s.name = d.name;
  s.weight = d.weight;
  s.min_length = d.min_length;
  s.max_length = d.max_length;
  s.min_stride = d.min_stride;
  s.max_stride = d.max_stride;
  s.has_motion = d.has_motion;
  for (const auto& sc : scenes) s.scene_frame_counts.push_back(sc.num_frames());
  return s;
}

}  // namespace densetrack::config
