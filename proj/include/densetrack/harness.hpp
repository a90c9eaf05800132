#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "densetrack/baseline.hpp"
#include "densetrack/config.hpp"
#include "densetrack/metrics.hpp"

namespace densetrack::harness {

inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
  std::string config_path;
  std::optional<uint64_t> seed;  // overrides the run seed and re-derives dataset seeds
  std::string out_dir;
  bool deterministic = true;
};

// Loads the config and applies the seed override.
config::RunConfig resolve_config(const RunOptions& opt);

// gen-data: scene bundles under out/train/<dataset>/scene_XXX and
// out/eval/<dataset>/scene_XXX. Returns the bundle directories.
std::vector<std::string> gen_data(const RunOptions& opt);

struct TrainRunOptions {
  std::string resume_from;
  long long stop_after = -1;
};

// Returns the last checkpoint written.
std::string train(const RunOptions& opt, const TrainRunOptions& train_opt = {});

enum class EvalMode { kTracking, kReconstruction };

struct EvalOptions {
  EvalMode mode = EvalMode::kTracking;
  std::string checkpoint;  // model or training checkpoint
  bool oracle = false;     // ground truth as the prediction
  bool zero_motion = false;
  std::optional<config::ScaleMode> scale_mode;            // overrides the config
  std::optional<std::pair<double, double>> depth_filter;  // overrides the config
  bool literal_apd = false;  // scale applied to ground truth inside APD
  std::string data_dir;      // bundles to evaluate instead of the config's eval datasets
};

struct MetricRecord {
  std::string metric;    // "tracking" or "reconstruction"
  std::string dataset;
  std::string sequence;  // scene name, "mean" or "all"
  std::string scale_mode;
  double scale = 1.0;
  std::vector<double> thresholds;
  std::vector<double> per_threshold;
  double apd = 0.0;
  double epe = 0.0;
  size_t points = 0;
};

std::string to_json(const MetricRecord& r);

// Writes metrics.jsonl and summary.txt; returns every record, the dataset
// summary rows last.
std::vector<MetricRecord> eval(const RunOptions& opt, const EvalOptions& eval_opt);

// Formats the summary rows as a fixed-width table.
std::string format_table(const std::vector<MetricRecord>& records);

struct BenchOptions {
  std::optional<std::vector<long long>> query_counts;
};

baseline::BenchResult bench_mem(const RunOptions& opt, const BenchOptions& bench_opt = {});

struct RenderOptions {
  std::string checkpoint;
  bool oracle = false;
  std::string data_dir;  // one scene bundle; otherwise eval dataset 0
  int scene = 0;
  int query = 0;
};

// Predicted pointmaps as PLY per frame plus a PNG of trajectories of a pixel
// grid of frame 0, predicted against ground truth. Returns written files.
std::vector<std::string> render(const RunOptions& opt, const RenderOptions& render_opt);

// Scene bundle directories below `root`, sorted.
std::vector<std::string> find_bundles(const std::string& root);

}  // namespace densetrack::harness
