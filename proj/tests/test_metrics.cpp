#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "densetrack/error.hpp"
#include "densetrack/metrics.hpp"
#include "densetrack/model.hpp"
#include "densetrack/random.hpp"

using namespace densetrack;
using namespace densetrack::metrics;

namespace {

TrackSet random_tracks(uint64_t seed, int n, double noise) {
  Rng rng(seed);
  TrackSet t;
  for (int i = 0; i < n; ++i) {
    const Vec3 g(rng.normal(), rng.normal(), 3.0 + rng.normal());
    t.ground_truth.push_back(g);
    t.predicted.push_back(0.8 * g + noise * Vec3(rng.normal(), rng.normal(), rng.normal()));
  }
  return t;
}

double sorted_lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

double oracle_scale(const TrackSet& t) {
  std::vector<double> g, p;
  for (size_t i = 0; i < t.size(); ++i) {
    g.push_back(t.ground_truth[i].norm());
    p.push_back(t.predicted[i].norm());
  }
  return sorted_lower_median(g) / sorted_lower_median(p);
}

TrackSet scaled(const TrackSet& t, double k) {
  TrackSet out = t;
  for (auto& p : out.predicted) p *= k;
  return out;
}

// Stub predictor that copies ground-truth maps; independent of the model code.
class CopyPredictor : public Predictor {
 public:
  PredictionBundle predict(const synth::SceneSample& seq, int query) override {
    PredictionBundle b;
    b.frames = seq.num_frames();
    b.height = seq.height;
    b.width = seq.width;
    b.query = query;
    const size_t hw = static_cast<size_t>(b.height) * b.width;
    b.points.assign(b.frames * hw * 3, 0.0f);
    b.motion.assign(b.frames * hw * 3, 0.0f);
    for (int f = 0; f < b.frames; ++f) {
      const auto& pm = seq.gt_pointmaps[static_cast<size_t>(f)];
      const auto m = synth::make_motion_target(seq, f, query);
      for (size_t i = 0; i < hw * 3; ++i) {
        b.points[f * hw * 3 + i] = static_cast<float>(pm.data[i]);
        b.motion[f * hw * 3 + i] = static_cast<float>(m.data[i]);
      }
    }
    return b;
  }
};

synth::SceneSample scene(uint64_t seed, bool moving) {
  synth::SceneConfig c;
  c.num_frames = 4;
  c.height = 24;
  c.width = 24;
  c.num_spheres = 2;
  c.seed = seed;
  if (!moving) {
    c.speed_min = c.speed_max = 0.0;
    c.camera = synth::CameraTrajectory::kStatic;
  } else {
    c.camera = synth::CameraTrajectory::kOrbit;
    c.camera_speed = 0.03;
  }
  return synth::generate_scene(c);
}

}  // namespace

TEST_CASE("median scale") {
  TrackSet t = random_tracks(1, 100, 0.05);
  CHECK(std::abs(median_scale(t) - oracle_scale(t)) <= 1e-12);
  TrackSet same = t;
  same.predicted = same.ground_truth;
  CHECK(median_scale(same) == 1.0);
  CHECK(median_scale(scaled(same, 2.0)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(lower_median({4.0, 1.0, 3.0, 2.0}) == 2.0);
  CHECK(lower_median({5.0, 1.0, 3.0}) == 3.0);
  TrackSet degenerate = same;
  for (auto& p : degenerate.predicted) p.setZero();
  CHECK_THROWS_AS(median_scale(degenerate), Error);
}

TEST_CASE("apd: four-point example gives 56.25") {
  // Unit scale is pinned by the median point, whose error is a chord on its
  // own norm sphere; the other errors are radial.
  const double errors[4] = {0.05, 0.2, 0.4, 2.0};
  const double norms[4] = {1.0, 5.0, 10.0, 20.0};
  TrackSet t;
  for (int i = 0; i < 4; ++i) {
    const Vec3 g(norms[i], 0.0, 0.0);
    t.ground_truth.push_back(g);
    if (i == 1) {
      const double theta = 2.0 * std::asin(errors[i] / (2.0 * norms[i]));
      t.predicted.push_back(norms[i] * Vec3(std::cos(theta), std::sin(theta), 0.0));
    } else {
      t.predicted.push_back(Vec3(norms[i] + errors[i], 0.0, 0.0));
    }
  }
  REQUIRE(median_scale(t) == doctest::Approx(1.0).epsilon(1e-12));
  // Hand loop over the 16 indicators.
  const auto th = default_thresholds();
  int hits = 0;
  for (int i = 0; i < 4; ++i) {
    const double r = (median_scale(t) * t.predicted[static_cast<size_t>(i)] - t.ground_truth[static_cast<size_t>(i)]).norm();
    CHECK(r == doctest::Approx(errors[i]).epsilon(1e-9));
    for (double d : th) hits += r < d ? 1 : 0;
  }
  CHECK(100.0 * hits / 16.0 == 56.25);
  const auto r = apd(t, th);
  CHECK(r.apd == doctest::Approx(56.25).epsilon(1e-12));
  REQUIRE(r.per_threshold.size() == 4);
  CHECK(r.per_threshold[0] == 25.0);
  CHECK(r.per_threshold[3] == 75.0);
}

TEST_CASE("apd and epe: identity and scale invariance") {
  TrackSet t = random_tracks(2, 200, 0.0);
  t.predicted = t.ground_truth;
  CHECK(apd(t, default_thresholds()).apd == 100.0);
  CHECK(epe(t) == 0.0);
  for (double k : {0.25, 1.7, 40.0}) {
    CHECK(apd(scaled(t, k), default_thresholds()).apd == 100.0);
    CHECK(epe(scaled(t, k)) <= 1e-9);
  }
  const TrackSet noisy = random_tracks(3, 300, 0.3);
  const double a = apd(noisy, default_thresholds()).apd;
  const double e = epe(noisy);
  for (double k : {0.1, 3.0, 1e3}) {
    CHECK(std::abs(apd(scaled(noisy, k), default_thresholds()).apd - a) <= 1e-9);
    CHECK(std::abs(epe(scaled(noisy, k)) - e) <= 1e-9);
  }
}

TEST_CASE("epe matches a loop oracle") {
  const TrackSet t = random_tracks(4, 101, 0.2);
  const double s = oracle_scale(t);
  double sum = 0.0;
  for (size_t i = 0; i < t.size(); ++i) {
    const Vec3 d = s * t.predicted[i] - t.ground_truth[i];
    sum += std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
  }
  CHECK(std::abs(epe(t) - sum / t.size()) <= 1e-9);
}

TEST_CASE("apd range, threshold monotonicity and permutation invariance") {
  const TrackSet t = random_tracks(5, 150, 0.4);
  const std::vector<double> th{0.1, 0.3, 0.5, 1.0};
  const double base = apd(t, th).apd;
  CHECK(base >= 0.0);
  CHECK(base <= 100.0);
  for (size_t k = 0; k < th.size(); ++k) {
    auto raised = th;
    raised[k] *= 1.3;
    if (k + 1 < th.size() && raised[k] >= raised[k + 1]) continue;
    CHECK(apd(t, raised).apd >= base);
  }
  std::vector<size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(6);
  for (size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<size_t>(rng.uniform_int(0, i))]);
  TrackSet p;
  for (size_t i : perm) {
    p.predicted.push_back(t.predicted[i]);
    p.ground_truth.push_back(t.ground_truth[i]);
  }
  CHECK(apd(p, th).apd == base);
  CHECK(std::abs(epe(p) - epe(t)) <= 1e-12);
}

TEST_CASE("literal placement puts the scale on ground truth") {
  TrackSet t = random_tracks(7, 50, 0.0);
  t.predicted = t.ground_truth;
  const TrackSet k = scaled(t, 2.0);
  // s = 0.5: scaling ground truth by 0.5 leaves pred = 2 gt far from it.
  CHECK(apd(k, default_thresholds(), ScalePlacement::kPrediction).apd == 100.0);
  CHECK(apd(k, default_thresholds(), ScalePlacement::kGroundTruth).apd < 100.0);
}

TEST_CASE("threshold and track validation") {
  CHECK_THROWS_AS(validate_thresholds(std::vector<double>{0.3, 0.1}), Error);
  CHECK_THROWS_AS(validate_thresholds(std::vector<double>{0.0, 0.1}), Error);
  TrackSet empty;
  CHECK_THROWS_AS(apd(empty, default_thresholds()), Error);
  TrackSet bad = random_tracks(8, 3, 0.1);
  bad.predicted[1].x() = std::nan("");
  CHECK_THROWS_AS(epe(bad), Error);
}

TEST_CASE("first-frame trajectories from ground-truth stubs score perfectly") {
  const auto seq = scene(11, true);
  CopyPredictor copy;
  model::OraclePredictor oracle;
  for (Predictor* p : {static_cast<Predictor*>(&copy), static_cast<Predictor*>(&oracle)}) {
    const TrackSet t = first_frame_trajectories(*p, seq);
    REQUIRE(t.size() > 0);
    CHECK(apd(t, default_thresholds()).apd == 100.0);
    CHECK(epe(t) <= 1e-6);
  }
}

TEST_CASE("first-frame trajectories: query 0 and static scenes") {
  const auto moving = scene(12, true);
  CopyPredictor copy;
  metrics::ZeroMotionPredictor zero(copy);
  // At q = 0 the motion target is zero, so zeroing motion changes nothing.
  const TrackSet a = first_frame_trajectories(copy, moving, {0});
  const TrackSet b = first_frame_trajectories(zero, moving, {0});
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.predicted[i] == b.predicted[i]);

  const auto still = scene(13, false);
  const TrackSet t0 = first_frame_trajectories(copy, still, {0});
  for (int q = 1; q < still.num_frames(); ++q) {
    const TrackSet tq = first_frame_trajectories(copy, still, {q});
    REQUIRE(tq.size() == t0.size());
    for (size_t i = 0; i < t0.size(); ++i) CHECK((tq.predicted[i] - t0.predicted[i]).norm() <= 1e-6);
  }
}

TEST_CASE("reconstruction tracks honour the depth window") {
  const auto seq = scene(14, true);
  model::OraclePredictor oracle;
  const auto pred = oracle.predict(seq, 0);
  const TrackSet all = reconstruction_tracks(pred, seq);
  const TrackSet near = reconstruction_tracks(pred, seq, std::make_pair(0.1, 4.0));
  CHECK(all.size() > near.size());
  CHECK(near.size() > 0);
  CHECK(apd(all, default_thresholds()).apd == 100.0);
}
