#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "densetrack/nn.hpp"
#include "densetrack/prediction.hpp"
#include "densetrack/synthdata.hpp"

namespace densetrack::model {

struct ModelConfig {
  int height = 32;
  int width = 32;
  int patch_size = 4;
  int dim = 32;
  int block_pairs = 2;  // L; the aggregator has 2L blocks, even indices frame-wise
  int heads = 2;
  int mlp_ratio = 4;
  std::vector<int> taps{1, 3};
  int head_channels = 16;
  int camera_head_layers = 4;
  int max_frames = 10;
  bool intrinsic_embedding = true;
  bool query_embedding = true;
  bool motion_head = true;
  uint64_t init_seed = 0;

  int grid_h() const { return height / patch_size; }
  int grid_w() const { return width / patch_size; }
  int patches() const { return grid_h() * grid_w(); }
  int tokens_per_frame() const { return 1 + kRegisterTokens + patches(); }
  void validate() const;

  static constexpr int kRegisterTokens = 4;
  static constexpr int kCameraParams = 9;
};

// Channel-first frames plus calibration, as consumed by the network.
struct ModelInput {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> images;  // [N, 3, H, W]
  std::vector<geometry::Intrinsics> intrinsics;
};

ModelInput make_input(const synth::SceneSample& sample);

struct ForwardOptions {
  int query = 0;
  bool use_query_embedding = true;
  bool run_motion_head = true;
};

struct ForwardResult {
  nn::Var points;       // [N, 3, H, W]
  nn::Var point_sigma;  // [N, 1, H, W]
  nn::Var depth;        // [N, 1, H, W]
  nn::Var depth_sigma;  // [N, 1, H, W]
  nn::Var motion;       // [N, 3, H, W] or null
  nn::Var camera;       // [N, 9]
};

enum class HeadKind { kPoint, kDepth, kMotion };

// Named parameters in registration order.
class ParamStore {
 public:
  nn::Var add(const std::string& name, nn::Tensor init);
  const nn::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, nn::Var>>& items() const { return items_; }
  void zero_grad();
  size_t count() const;

 private:
  std::vector<std::pair<std::string, nn::Var>> items_;
  std::map<std::string, size_t> index_;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model& other);  // deep copy of parameters
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Patch tokens of one frame: linear patch embedding plus the 2-D position table.
  nn::Var patchify(const ModelInput& in, int frame) const;
  // Linear map of (fx/W, fy/W, py/H); px is not an input.
  nn::Var intrinsic_embedding(const geometry::Intrinsics& k) const;
  // Adds the query vector to the patch tokens of frame `query` only.
  std::vector<nn::Var> add_query_embedding(const std::vector<nn::Var>& patch_tokens, int query) const;
  // [N*T, D] token matrix with per-frame camera, register and patch rows.
  nn::Var assemble_tokens(const ModelInput& in, const ForwardOptions& opt) const;
  nn::Var run_block(int block, const nn::Var& tokens, int frames) const;
  // Outputs of every aggregator block.
  std::vector<nn::Var> aggregate(const nn::Var& tokens, int frames) const;
  nn::Var camera_head(const nn::Var& final_tokens, int frames) const;
  nn::Var dense_head(HeadKind kind, const std::vector<nn::Var>& layers, const ModelInput& in) const;

  ForwardResult forward(const ModelInput& in, const ForwardOptions& opt) const;
  // Evaluation-mode forward without gradient recording.
  PredictionBundle predict(const ModelInput& in, const ForwardOptions& opt) const;

  // Motion head := point head (xyz output channels), used at phase-2 entry.
  void copy_point_head_to_motion_head();

 private:
  void init_parameters();
  void add_linear(const std::string& name, int in, int out, double std, Rng& rng);
  void add_block(const std::string& name, Rng& rng);
  void add_dense_head(const std::string& name, int out_channels, Rng& rng);
  nn::Var apply_block(const std::string& name, const nn::Var& x, const std::vector<std::pair<int, int>>& segments) const;
  nn::Var lin(const std::string& name, const nn::Var& x) const;

  ModelConfig cfg_;
  ParamStore params_;
};

// Predictor adapter running the model in evaluation mode.
class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(const Model& m, bool use_query_embedding = true) : model_(m), use_query_(use_query_embedding) {}
  PredictionBundle predict(const synth::SceneSample& sequence, int query) override;

 private:
  const Model& model_;
  bool use_query_;
};

// Returns ground truth as the prediction: frame pointmaps, depth, exact
// motion to the query frame, and true camera encodings.
class OraclePredictor : public Predictor {
 public:
  PredictionBundle predict(const synth::SceneSample& sequence, int query) override;
};

}  // namespace densetrack::model
