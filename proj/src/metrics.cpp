#include "densetrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "densetrack/error.hpp"

namespace densetrack::metrics {

void TrackSet::validate() const {
  require(predicted.size() == ground_truth.size(), "track set: predicted and ground-truth counts differ");
  require(!ground_truth.empty(), "track set is empty");
  for (size_t i = 0; i < predicted.size(); ++i) {
    require(predicted[i].allFinite() && ground_truth[i].allFinite(), "track set contains non-finite positions",
            ErrorCode::kNumeric);
  }
}

void TrackSet::append(const TrackSet& other) {
  predicted.insert(predicted.end(), other.predicted.begin(), other.predicted.end());
  ground_truth.insert(ground_truth.end(), other.ground_truth.begin(), other.ground_truth.end());
}

std::vector<double> default_thresholds() { return {0.1, 0.3, 0.5, 1.0}; }

void validate_thresholds(std::span<const double> thresholds) {
  require(!thresholds.empty(), "threshold list is empty");
  for (size_t i = 0; i < thresholds.size(); ++i) {
    require(thresholds[i] > 0.0, "thresholds must be positive");
    if (i > 0) require(thresholds[i] > thresholds[i - 1], "thresholds must be strictly increasing");
  }
}

double lower_median(std::vector<double> values) {
  require(!values.empty(), "median of an empty set");
  const size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

double median_scale(const TrackSet& tracks) {
  tracks.validate();
  std::vector<double> gt_norms, pred_norms;
  gt_norms.reserve(tracks.size());
  pred_norms.reserve(tracks.size());
  for (size_t i = 0; i < tracks.size(); ++i) {
    gt_norms.push_back(tracks.ground_truth[i].norm());
    pred_norms.push_back(tracks.predicted[i].norm());
  }
  const double pred_median = lower_median(std::move(pred_norms));
  if (!(pred_median > 0.0)) fail(ErrorCode::kNumeric, "median predicted norm is zero (degenerate prediction)");
  return lower_median(std::move(gt_norms)) / pred_median;
}

ApdResult apd(const TrackSet& tracks, std::span<const double> thresholds, ScalePlacement placement) {
  validate_thresholds(thresholds);
  ApdResult out;
  out.scale = median_scale(tracks);
  std::vector<size_t> hits(thresholds.size(), 0);
  for (size_t i = 0; i < tracks.size(); ++i) {
    const double err = placement == ScalePlacement::kPrediction
                           ? (out.scale * tracks.predicted[i] - tracks.ground_truth[i]).norm()
                           : (tracks.predicted[i] - out.scale * tracks.ground_truth[i]).norm();
    for (size_t k = 0; k < thresholds.size(); ++k) {
      if (err < thresholds[k]) ++hits[k];
    }
  }
  const double n = static_cast<double>(tracks.size());
  double total = 0.0;
  for (size_t k = 0; k < thresholds.size(); ++k) {
    out.per_threshold.push_back(100.0 * static_cast<double>(hits[k]) / n);
    total += static_cast<double>(hits[k]);
  }
  out.apd = 100.0 * total / (n * static_cast<double>(thresholds.size()));
  return out;
}

double epe(const TrackSet& tracks) {
  const double s = median_scale(tracks);
  double sum = 0.0;
  for (size_t i = 0; i < tracks.size(); ++i) sum += (s * tracks.predicted[i] - tracks.ground_truth[i]).norm();
  return sum / static_cast<double>(tracks.size());
}

TrackSet first_frame_trajectories(Predictor& predictor, const synth::SceneSample& sequence, std::vector<int> query_times) {
  if (query_times.empty()) {
    query_times.resize(static_cast<size_t>(sequence.num_frames()));
    std::iota(query_times.begin(), query_times.end(), 0);
  }
  const auto& gt0 = sequence.gt_pointmaps[0];
  const size_t hw = gt0.pixels();
  TrackSet tracks;
  for (int q : query_times) {
    const PredictionBundle pred = predictor.predict(sequence, q);
    require(pred.frames == sequence.num_frames() && pred.height == sequence.height && pred.width == sequence.width,
            "first_frame_trajectories: prediction shape does not match the sequence");
    const geometry::MotionMap target = synth::make_motion_target(sequence, 0, q);
    for (size_t p = 0; p < hw; ++p) {
      if (!target.valid[p] || !gt0.valid[p]) continue;
      Vec3 x(pred.points[p * 3], pred.points[p * 3 + 1], pred.points[p * 3 + 2]);
      if (!pred.motion.empty()) x += Vec3(pred.motion[p * 3], pred.motion[p * 3 + 1], pred.motion[p * 3 + 2]);
      const Vec3 gt = Vec3(gt0.data[p * 3], gt0.data[p * 3 + 1], gt0.data[p * 3 + 2]) +
                      Vec3(target.data[p * 3], target.data[p * 3 + 1], target.data[p * 3 + 2]);
      tracks.predicted.push_back(x);
      tracks.ground_truth.push_back(gt);
    }
  }
  return tracks;
}

TrackSet reconstruction_tracks(const PredictionBundle& prediction, const synth::SceneSample& sequence,
                               std::optional<std::pair<double, double>> depth_range) {
  require(prediction.frames == sequence.num_frames(), "reconstruction_tracks: frame count mismatch");
  TrackSet tracks;
  const size_t hw = static_cast<size_t>(sequence.height) * sequence.width;
  for (int f = 0; f < sequence.num_frames(); ++f) {
    const auto& pm = sequence.gt_pointmaps[static_cast<size_t>(f)];
    const auto& depth = sequence.frames[static_cast<size_t>(f)].depth;
    for (size_t p = 0; p < hw; ++p) {
      if (!pm.valid[p]) continue;
      if (depth_range && !(depth.data[p] >= depth_range->first && depth.data[p] <= depth_range->second)) continue;
      const size_t o = static_cast<size_t>(f) * hw + p;
      tracks.predicted.emplace_back(prediction.points[o * 3], prediction.points[o * 3 + 1], prediction.points[o * 3 + 2]);
      tracks.ground_truth.emplace_back(pm.data[p * 3], pm.data[p * 3 + 1], pm.data[p * 3 + 2]);
    }
  }
  return tracks;
}

PredictionBundle ZeroMotionPredictor::predict(const synth::SceneSample& sequence, int query) {
  PredictionBundle b = inner_.predict(sequence, query);
  std::fill(b.motion.begin(), b.motion.end(), 0.0f);
  return b;
}

}  // namespace densetrack::metrics
