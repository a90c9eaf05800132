#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "densetrack/geometry.hpp"
#include "densetrack/prediction.hpp"
#include "densetrack/synthdata.hpp"

namespace densetrack::metrics {

using geometry::Vec3;

// Matched predicted / ground-truth positions, flattened over (point, time).
struct TrackSet {
  std::vector<Vec3> predicted;
  std::vector<Vec3> ground_truth;

  size_t size() const { return ground_truth.size(); }
  void validate() const;
  void append(const TrackSet& other);
};

// Where the median scale factor is applied inside the APD indicator.
// kPrediction: |s·pred - gt| (default). kGroundTruth: |pred - s·gt|, the
// literal form of the APD formula, kept for comparison.
enum class ScalePlacement { kPrediction, kGroundTruth };

std::vector<double> default_thresholds();
void validate_thresholds(std::span<const double> thresholds);

// Lower-middle element for even counts.
double lower_median(std::vector<double> values);

// median |gt| / median |pred|.
double median_scale(const TrackSet& tracks);

struct ApdResult {
  double apd = 0.0;  // percent
  double scale = 1.0;
  std::vector<double> per_threshold;  // percent per threshold
};

ApdResult apd(const TrackSet& tracks, std::span<const double> thresholds,
              ScalePlacement placement = ScalePlacement::kPrediction);

// Mean |s·pred - gt|.
double epe(const TrackSet& tracks);

// For each query time, runs the predictor and reads frame 0's positions at
// that time (pointmap plus motion) at the pixels visible at the query time.
TrackSet first_frame_trajectories(Predictor& predictor, const synth::SceneSample& sequence,
                                  std::vector<int> query_times = {});

// Per-frame pointmap predictions against ground truth; optional ground-truth
// depth window [min, max].
TrackSet reconstruction_tracks(const PredictionBundle& prediction, const synth::SceneSample& sequence,
                               std::optional<std::pair<double, double>> depth_range = std::nullopt);

// Wraps a predictor and replaces its motion output by zero.
class ZeroMotionPredictor : public Predictor {
 public:
  explicit ZeroMotionPredictor(Predictor& inner) : inner_(inner) {}
  PredictionBundle predict(const synth::SceneSample& sequence, int query) override;

 private:
  Predictor& inner_;
};

}  // namespace densetrack::metrics
