#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "densetrack/config.hpp"
#include "densetrack/losses.hpp"
#include "densetrack/model.hpp"

namespace densetrack::training {

struct ParamGroup {
  std::string name;
  double base_lr = 0.0;
  std::vector<std::string> params;
};

struct PhaseSpec {
  int id = 1;
  bool camera_loss = true;
  bool depth_loss = true;
  bool point_loss = true;
  bool motion_loss = false;
  bool confidence_terms = true;  // Σ-weighted confidence and gradient terms
  bool intrinsic_embedding = true;
  bool query_embedding = false;
  bool motion_datasets_only = false;
  std::vector<ParamGroup> groups;
  int steps = 0;
  int warmup = 0;

  const ParamGroup* group_of(const std::string& param) const;
};

// Loss terms, embeddings and learning-rate groups of phase 1 or 2. Base
// rates are multiplied by phase.lr_scale.
PhaseSpec build_phase(int id, const model::Model& m, const config::PhaseConfig& phase = {});

// Linear warmup to base_lr, then half-cosine decay to 0 at `total`.
double lr_schedule(int step, int warmup, int total, double base_lr);

// Ground truth for one training sequence in the layouts the losses use.
struct Targets {
  losses::MapShape shape3;  // N×H×W×3
  losses::MapShape shape1;  // N×H×W×1
  std::vector<double> camera;  // N×9
  std::vector<double> depth;
  std::vector<uint8_t> depth_valid;
  std::vector<double> points;
  std::vector<uint8_t> point_valid;
  std::vector<double> motion;
  std::vector<uint8_t> motion_valid;
};

Targets make_targets(const synth::SceneSample& seq, int query, bool with_motion);

// Evaluates the phase-active losses on a forward result and attaches a
// scalar node whose backward pass seeds the head outputs with the analytic
// loss gradients.
struct LossGraph {
  losses::LossReport report;
  nn::Var root;
};
LossGraph compute_loss(const model::ForwardResult& out, const Targets& targets, const PhaseSpec& phase,
                       const losses::LossWeights& weights);

// Adam with per-parameter state; bias-corrected.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(model::ParamStore& params, const std::map<std::string, double>& lr);
  void reset();

  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }
  std::map<std::string, nn::Tensor>& first_moments() { return m_; }
  std::map<std::string, nn::Tensor>& second_moments() { return v_; }
  const std::map<std::string, nn::Tensor>& first_moments() const { return m_; }
  const std::map<std::string, nn::Tensor>& second_moments() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, nn::Tensor> m_, v_;
};

struct StepLog {
  int phase = 1;
  int step = 0;  // within the phase
  uint64_t batch_seed = 0;
  int dataset = 0;
  int scene = 0;
  int query = 0;
  std::vector<int> frames;
  std::map<std::string, double> lr;  // per group
  losses::LossReport loss;
};

std::string to_json(const StepLog& s);

struct TrainState {
  int phase = 1;
  int step = 0;  // next step to run within `phase`
  bool phase2_initialized = false;
  double running_loss = 0.0;  // exponential average of the total loss
  int64_t adam_t = 0;
};

struct TrainOptions {
  std::string out_dir;           // empty: no files written
  std::string resume_from;       // checkpoint path
  bool deterministic = true;
  long long stop_after = -1;     // stop once this many steps ran in this call
  std::function<void(const StepLog&)> on_step;
};

class Trainer {
 public:
  Trainer(const config::RunConfig& cfg, TrainOptions opt);

  // Runs both phases to completion (or until stop_after); returns the path of
  // the last checkpoint written, empty if none.
  std::string run();

  model::Model& model() { return model_; }
  const TrainState& state() const { return state_; }
  const std::vector<StepLog>& history() const { return history_; }
  const std::vector<std::vector<synth::SceneSample>>& scenes() const { return scenes_; }

  // Full state: parameters, Adam moments and counters.
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  // One deterministic step of the current phase; exposed for tests.
  StepLog train_step(const PhaseSpec& phase, int step);

 private:
  PhaseSpec phase_spec(int id) const;
  void enter_phase2();
  void write_log(const StepLog& s);

  config::RunConfig cfg_;
  TrainOptions opt_;
  model::Model model_;
  Adam adam_;
  TrainState state_;
  std::vector<std::vector<synth::SceneSample>> scenes_;
  std::vector<synth::DatasetSpec> specs_;
  std::vector<StepLog> history_;
};

}  // namespace densetrack::training
