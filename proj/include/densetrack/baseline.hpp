#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densetrack/model.hpp"
#include "densetrack/nn.hpp"
#include "densetrack/synthdata.hpp"

namespace densetrack::baseline {

struct BaselineConfig {
  int dim = 32;
  int heads = 2;
  int patch_size = 8;
  uint64_t seed = 0;
};

// Query location in pixel coordinates of the query frame.
struct QueryPoint {
  double u = 0.0;
  double v = 0.0;
};

// Per-query tracker: each query point owns a token that is refined against
// every frame's patch features by cross-attention and decoded to a 3D
// position per frame. Its buffers grow linearly with the query count, which
// is what the memory benchmark contrasts with the dense head.
class QueryTokenBaseline {
 public:
  QueryTokenBaseline(const BaselineConfig& cfg, int height, int width);

  const BaselineConfig& config() const { return cfg_; }
  size_t parameter_bytes() const;

  // Patch features [N, P, D] of every frame.
  nn::Tensor frame_features(const synth::SceneSample& seq) const;
  // Positions [N, Q, 3]; Q may be zero.
  nn::Tensor track(const synth::SceneSample& seq, int query, const std::vector<QueryPoint>& queries) const;

 private:
  BaselineConfig cfg_;
  int height_, width_, gh_, gw_;
  nn::Tensor embed_;   // [p*p*3, D]
  nn::Tensor pos_;     // [P, D]
  nn::Tensor uv_;      // [3, D]
  nn::Tensor out_;     // [D, 3]
  nn::Tensor mix_;     // [D, D]
};

// Deterministic query set: all pixel centers for count < 0, otherwise
// `count` uniform sub-pixel locations.
std::vector<QueryPoint> make_queries(int height, int width, long long count, uint64_t seed);

struct MemoryRecord {
  std::string method;          // "dense" or "query_token"
  long long query_count = 0;   // as configured; -1 means all pixels
  long long queries = 0;       // resolved count
  size_t working_bytes = 0;    // peak tensor bytes above the pre-run level
  size_t parameter_bytes = 0;
  size_t peak_bytes = 0;       // working + parameters
  bool oom = false;            // hit the emulated memory ceiling
  double seconds = 0.0;
};

struct BenchResult {
  std::vector<MemoryRecord> records;
  double dense_slope = 0.0;     // bytes per query, least squares
  double baseline_slope = 0.0;
  double dense_spread = 0.0;    // (max - min) / min of dense peaks
};

// Least-squares slope of y on x; 0 for fewer than two distinct x.
double slope_fit(const std::vector<double>& x, const std::vector<double>& y);

// Peak tensor memory of the dense forward and the query-token baseline for
// each query count on one sequence. Each measurement starts from a reset
// peak counter with no activations alive. With a nonzero limit, an
// out-of-memory baseline run is recorded and ends the baseline series.
BenchResult bench_memory(const model::Model& dense, const QueryTokenBaseline& baseline, const synth::SceneSample& seq,
                         const std::vector<long long>& query_counts, size_t memory_limit_bytes = 0,
                         uint64_t seed = 0);

std::string to_json(const MemoryRecord& r);

}  // namespace densetrack::baseline
