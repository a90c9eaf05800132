#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "densetrack/losses.hpp"
#include "densetrack/model.hpp"
#include "densetrack/synthdata.hpp"

namespace densetrack::config {

// A family of generated scenes sampled as one dataset.
struct DatasetConfig {
  std::string name = "synthetic";
  double weight = 1.0;
  int scenes = 3;
  uint64_t seed = 0;  // scene i uses mix_seed(seed, i)
  bool has_motion = true;
  int min_length = 2;
  int max_length = 4;
  int min_stride = 1;
  int max_stride = 1;
  synth::SceneConfig scene;

  void validate() const;
};

struct PhaseConfig {
  int steps = 3000;
  int warmup = 100;
  // Multiplies every group's base rate; 1 keeps the published rates.
  double lr_scale = 1.0;
  int checkpoint_every = 0;  // 0: only the end-of-phase checkpoint

  void validate() const;
};

struct TrainConfig {
  PhaseConfig phase1;
  PhaseConfig phase2;
  losses::LossWeights weights;
  bool augment = false;
  synth::AugmentationSpec augmentation;
  int log_every = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

enum class ScaleMode { kPerSequence, kGlobal };

const char* to_string(ScaleMode m);
ScaleMode scale_mode_from_string(const std::string& s);

struct EvalConfig {
  std::vector<DatasetConfig> datasets;  // held-out scenes
  std::vector<double> thresholds{0.1, 0.3, 0.5, 1.0};
  ScaleMode scale_mode = ScaleMode::kPerSequence;
  bool scale_on_ground_truth = false;  // literal APD variant
  std::optional<std::pair<double, double>> depth_filter;

  void validate() const;
};

struct BenchConfig {
  int frames = 10;
  model::ModelConfig model;  // dense path; resolution defines all-pixels count
  std::vector<long long> query_counts{1000, 10000, 50000, -1};  // -1: all pixels
  int baseline_dim = 32;
  int baseline_heads = 2;
  size_t memory_limit_bytes = 0;  // 0: unlimited; otherwise emulated OOM ceiling

  void validate() const;
};

struct RunConfig {
  model::ModelConfig model;
  std::vector<DatasetConfig> datasets;
  TrainConfig train;
  EvalConfig eval;
  BenchConfig bench;
  uint64_t seed = 0;

  void validate() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string to_json(const RunConfig& cfg);  // canonical, round-trips through parse_config

std::string to_json(const model::ModelConfig& m);
std::string to_json(const synth::SceneConfig& s);
synth::SceneConfig scene_config_from_json(const std::string& json_text);
model::ModelConfig model_config_from_json(const std::string& json_text);

// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);
std::string fnv1a_hex(const std::string& bytes);

// All scenes of a dataset, generated deterministically.
std::vector<synth::SceneSample> generate_dataset(const DatasetConfig& d);
synth::DatasetSpec dataset_spec(const DatasetConfig& d, const std::vector<synth::SceneSample>& scenes);

}  // namespace densetrack::config
