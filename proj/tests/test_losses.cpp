#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "densetrack/error.hpp"
#include "densetrack/losses.hpp"
#include "densetrack/random.hpp"

using namespace densetrack;
using namespace densetrack::losses;

namespace {

struct Instance {
  MapShape shape;
  std::vector<double> pred, gt, sigma;
  std::vector<uint8_t> valid;
};

Instance random_instance(uint64_t seed, int channels, double invalid_fraction = 0.25) {
  Rng rng(seed);
  Instance in;
  in.shape = {2, 5, 6, channels};
  in.pred.resize(in.shape.values());
  in.gt.resize(in.shape.values());
  for (auto& v : in.pred) v = rng.normal();
  for (auto& v : in.gt) v = rng.normal();
  in.sigma.resize(in.shape.pixels());
  for (auto& s : in.sigma) s = rng.uniform(0.5, 3.0);
  in.valid.resize(in.shape.pixels());
  for (auto& m : in.valid) m = rng.uniform() >= invalid_fraction ? 1 : 0;
  return in;
}

double pixel_norm(const Instance& in, const std::vector<double>& pred, size_t p) {
  double s = 0.0;
  for (int c = 0; c < in.shape.channels; ++c) {
    const double r = pred[p * in.shape.channels + c] - in.gt[p * in.shape.channels + c];
    s += r * r;
  }
  return std::sqrt(s);
}

// Brute-force loops written directly from the loss definitions.
double oracle_regression(const Instance& in, const std::vector<double>& pred) {
  double sum = 0.0;
  int n = 0;
  for (size_t p = 0; p < in.shape.pixels(); ++p) {
    if (!in.valid[p]) continue;
    sum += pixel_norm(in, pred, p);
    ++n;
  }
  return n ? sum / n : 0.0;
}

double oracle_confidence(const Instance& in, const std::vector<double>& pred, const std::vector<double>& sigma,
                         double alpha) {
  double sum = 0.0;
  int n = 0;
  for (size_t p = 0; p < in.shape.pixels(); ++p) {
    if (!in.valid[p]) continue;
    sum += sigma[p] * pixel_norm(in, pred, p) - alpha * std::log(sigma[p]);
    ++n;
  }
  return n ? sum / n : 0.0;
}

double oracle_gradient(const Instance& in, const std::vector<double>& pred, const std::vector<double>& sigma) {
  const auto& s = in.shape;
  auto at = [&](const std::vector<double>& m, int f, int j, int i, int c) {
    return m[((static_cast<size_t>(f) * s.height + j) * s.width + i) * s.channels + c];
  };
  auto ok = [&](int f, int j, int i) { return in.valid[(static_cast<size_t>(f) * s.height + j) * s.width + i] != 0; };
  double sum = 0.0;
  int n = 0;
  for (int f = 0; f < s.frames; ++f) {
    for (int j = 0; j < s.height; ++j) {
      for (int i = 0; i < s.width; ++i) {
        if (i + 1 >= s.width || j + 1 >= s.height) continue;
        if (!ok(f, j, i) || !ok(f, j, i + 1) || !ok(f, j + 1, i)) continue;
        double sq = 0.0;
        for (int c = 0; c < s.channels; ++c) {
          const double dx = (at(pred, f, j, i + 1, c) - at(pred, f, j, i, c)) - (at(in.gt, f, j, i + 1, c) - at(in.gt, f, j, i, c));
          const double dy = (at(pred, f, j + 1, i, c) - at(pred, f, j, i, c)) - (at(in.gt, f, j + 1, i, c) - at(in.gt, f, j, i, c));
          sq += dx * dx + dy * dy;
        }
        sum += sigma[(static_cast<size_t>(f) * s.height + j) * s.width + i] * std::sqrt(sq);
        ++n;
      }
    }
  }
  return n ? sum / n : 0.0;
}

// Central differences at double precision; relative error below 1e-4.
void check_gradient(const std::vector<double>& x, const std::vector<double>& analytic,
                    const std::function<double(const std::vector<double>&)>& f) {
  REQUIRE(analytic.size() == x.size());
  const double h = 1e-6;
  for (size_t i = 0; i < x.size(); ++i) {
    auto plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (f(plus) - f(minus)) / (2.0 * h);
    CHECK(std::abs(fd - analytic[i]) <= 1e-4 * std::max(std::abs(analytic[i]), 1e-3));
  }
}

}  // namespace

TEST_CASE("huber is quadratic below the threshold and linear above") {
  CHECK(huber(0.05, 0.1) == doctest::Approx(0.05 * 0.05 / 2).epsilon(1e-15));
  CHECK(huber(-0.3, 0.1) == doctest::Approx(0.1 * (0.3 - 0.05)).epsilon(1e-15));
  CHECK(huber(0.1, 0.1) == doctest::Approx(0.1 * 0.05).epsilon(1e-15));
}

TEST_CASE("camera loss examples, oracle and gradient") {
  Rng rng(21);
  std::vector<double> gt(45), pred(45);
  for (size_t i = 0; i < gt.size(); ++i) {
    gt[i] = rng.normal();
    pred[i] = gt[i] + 0.2 * rng.normal();
  }
  CHECK(camera_loss(gt, gt, 0.1).value == 0.0);
  double oracle = 0.0;
  for (size_t i = 0; i < gt.size(); ++i) {
    const double r = std::abs(pred[i] - gt[i]);
    oracle += r < 0.1 ? 0.5 * r * r : 0.1 * (r - 0.05);
  }
  const auto l = camera_loss(pred, gt, 0.1);
  CHECK(std::abs(l.value - oracle) <= 1e-9);
  check_gradient(pred, l.d_pred, [&](const std::vector<double>& p) { return camera_loss(p, gt, 0.1).value; });
  CHECK_THROWS_AS(camera_loss(std::vector<double>(9), std::vector<double>(18), 0.1), Error);
}

TEST_CASE("map regression loss") {
  SUBCASE("pred equals gt") {
    const auto in = random_instance(1, 3);
    CHECK(map_regression_loss(in.gt, in.gt, in.valid, in.shape).value == 0.0);
  }
  SUBCASE("constant offset on a scalar map") {
    auto in = random_instance(2, 1);
    std::vector<double> pred = in.gt;
    for (auto& v : pred) v -= 0.37;
    CHECK(map_regression_loss(pred, in.gt, in.valid, in.shape).value == doctest::Approx(0.37).epsilon(1e-12));
  }
  SUBCASE("random maps against the loop oracle and finite differences") {
    for (uint64_t seed = 10; seed < 15; ++seed) {
      const auto in = random_instance(seed, seed % 2 ? 3 : 1);
      const auto l = map_regression_loss(in.pred, in.gt, in.valid, in.shape);
      CHECK(std::abs(l.value - oracle_regression(in, in.pred)) <= 1e-9);
      check_gradient(in.pred, l.d_pred, [&](const std::vector<double>& p) { return oracle_regression(in, p); });
    }
  }
  SUBCASE("empty mask is zero and flagged") {
    auto in = random_instance(3, 3);
    std::fill(in.valid.begin(), in.valid.end(), 0);
    const auto l = map_regression_loss(in.pred, in.gt, in.valid, in.shape);
    CHECK(l.value == 0.0);
    CHECK(l.empty_mask);
  }
  SUBCASE("shape mismatch is an error") {
    const auto in = random_instance(4, 3);
    MapShape wrong = in.shape;
    wrong.channels = 1;
    CHECK_THROWS_AS(map_regression_loss(in.pred, in.gt, in.valid, wrong), Error);
  }
}

TEST_CASE("confidence loss") {
  SUBCASE("unit uncertainty reduces to regression exactly") {
    for (uint64_t seed = 30; seed < 35; ++seed) {
      const auto in = random_instance(seed, 3);
      const std::vector<double> ones(in.shape.pixels(), 1.0);
      CHECK(confidence_loss(in.pred, in.gt, ones, in.valid, in.shape, 0.2).value ==
            map_regression_loss(in.pred, in.gt, in.valid, in.shape).value);
    }
  }
  SUBCASE("pred equals gt with sigma e and alpha 1") {
    const auto in = random_instance(36, 1);
    const std::vector<double> e(in.shape.pixels(), std::exp(1.0));
    CHECK(confidence_loss(in.gt, in.gt, e, in.valid, in.shape, 1.0).value == doctest::Approx(-1.0).epsilon(1e-15));
  }
  SUBCASE("random inputs against the loop oracle and finite differences") {
    for (uint64_t seed = 40; seed < 45; ++seed) {
      const auto in = random_instance(seed, seed % 2 ? 3 : 1);
      const auto l = confidence_loss(in.pred, in.gt, in.sigma, in.valid, in.shape, 0.2);
      CHECK(std::abs(l.value - oracle_confidence(in, in.pred, in.sigma, 0.2)) <= 1e-9);
      check_gradient(in.pred, l.d_pred,
                     [&](const std::vector<double>& p) { return oracle_confidence(in, p, in.sigma, 0.2); });
      check_gradient(in.sigma, l.d_sigma,
                     [&](const std::vector<double>& s) { return oracle_confidence(in, in.pred, s, 0.2); });
    }
  }
  SUBCASE("nonpositive uncertainty on a valid pixel is an error") {
    auto in = random_instance(46, 3);
    for (size_t p = 0; p < in.shape.pixels(); ++p) {
      if (in.valid[p]) {
        in.sigma[p] = 0.0;
        break;
      }
    }
    CHECK_THROWS_AS(confidence_loss(in.pred, in.gt, in.sigma, in.valid, in.shape, 0.2), Error);
  }
}

TEST_CASE("gradient loss") {
  SUBCASE("global offset and identity give zero") {
    const auto in = random_instance(50, 3);
    std::vector<double> shifted = in.gt;
    for (auto& v : shifted) v += 1.5;
    CHECK(gradient_loss(shifted, in.gt, in.sigma, in.valid, in.shape).value <= 1e-12);
    CHECK(gradient_loss(in.gt, in.gt, in.sigma, in.valid, in.shape).value == 0.0);
  }
  SUBCASE("random maps against the loop oracle and finite differences") {
    for (uint64_t seed = 51; seed < 56; ++seed) {
      const auto in = random_instance(seed, seed % 2 ? 3 : 1, 0.15);
      const auto l = gradient_loss(in.pred, in.gt, in.sigma, in.valid, in.shape);
      CHECK(l.count > 0);
      CHECK(std::abs(l.value - oracle_gradient(in, in.pred, in.sigma)) <= 1e-9);
      check_gradient(in.pred, l.d_pred, [&](const std::vector<double>& p) { return oracle_gradient(in, p, in.sigma); });
      check_gradient(in.sigma, l.d_sigma, [&](const std::vector<double>& s) { return oracle_gradient(in, in.pred, s); });
    }
  }
}

TEST_CASE("motion loss") {
  SUBCASE("pred equals target on the mask") {
    auto in = random_instance(60, 3);
    std::vector<double> pred = in.gt;
    for (size_t p = 0; p < in.shape.pixels(); ++p) {
      if (!in.valid[p]) pred[p * 3] += 9.0;
    }
    CHECK(motion_loss(pred, in.gt, in.valid, in.shape).value == 0.0);
  }
  SUBCASE("random masked maps against the loop oracle and finite differences") {
    for (uint64_t seed = 61; seed < 66; ++seed) {
      const auto in = random_instance(seed, 3, 0.5);
      const auto l = motion_loss(in.pred, in.gt, in.valid, in.shape);
      CHECK(std::abs(l.value - oracle_regression(in, in.pred)) <= 1e-9);
      check_gradient(in.pred, l.d_pred, [&](const std::vector<double>& p) { return oracle_regression(in, p); });
    }
  }
}

TEST_CASE("every loss ignores predictions at invalid pixels") {
  for (uint64_t seed = 70; seed < 75; ++seed) {
    const auto in = random_instance(seed, 3, 0.4);
    std::vector<double> pred = in.pred, sigma = in.sigma;
    Rng rng(seed + 100);
    for (size_t p = 0; p < in.shape.pixels(); ++p) {
      if (in.valid[p]) continue;
      for (int c = 0; c < 3; ++c) pred[p * 3 + c] = 1e3 * rng.normal();
      sigma[p] = -5.0;
    }
    CHECK(map_regression_loss(pred, in.gt, in.valid, in.shape).value ==
          map_regression_loss(in.pred, in.gt, in.valid, in.shape).value);
    CHECK(confidence_loss(pred, in.gt, sigma, in.valid, in.shape, 0.2).value ==
          confidence_loss(in.pred, in.gt, in.sigma, in.valid, in.shape, 0.2).value);
    CHECK(gradient_loss(pred, in.gt, sigma, in.valid, in.shape).value ==
          gradient_loss(in.pred, in.gt, in.sigma, in.valid, in.shape).value);
    CHECK(motion_loss(pred, in.gt, in.valid, in.shape).value == motion_loss(in.pred, in.gt, in.valid, in.shape).value);
  }
}

TEST_CASE("total loss weighting") {
  Rng rng(80);
  LossComponents c;
  c.camera = rng.uniform();
  c.depth_reg = rng.uniform();
  c.depth_conf = rng.normal();
  c.depth_grad = rng.uniform();
  c.point_reg = rng.uniform();
  c.point_conf = rng.normal();
  c.point_grad = rng.uniform();
  c.motion_reg = rng.uniform();

  SUBCASE("all weights zero") {
    LossWeights w;
    w.camera = w.depth = w.point = w.motion = 0.0;
    CHECK(total_loss(c, w).total == 0.0);
  }
  SUBCASE("zero motion weight equals the phase-1 objective") {
    LossWeights w;
    w.motion = 0.0;
    LossComponents no_motion = c;
    no_motion.motion_reg = 0.0;
    CHECK(total_loss(c, w).total == total_loss(no_motion, LossWeights{}).total);
  }
  SUBCASE("random weights against a dot product") {
    LossWeights w;
    w.camera = rng.uniform(0, 5);
    w.depth = rng.uniform(0, 5);
    w.point = rng.uniform(0, 5);
    w.motion = rng.uniform(0, 5);
    const double comps[8] = {c.camera, c.depth_reg, c.depth_conf, c.depth_grad,
                             c.point_reg, c.point_conf, c.point_grad, c.motion_reg};
    const double ws[8] = {w.camera, w.depth, w.depth, w.depth, w.point, w.point, w.point, w.motion};
    double dot = 0.0;
    for (int i = 0; i < 8; ++i) dot += comps[i] * ws[i];
    const auto r = total_loss(c, w);
    CHECK(std::abs(r.total - dot) <= 1e-12);
    CHECK(r.flat().at("total") == r.total);
    CHECK(r.flat().at("motion.reg") == c.motion_reg);
  }
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.huber_eps = 0.0;
  CHECK_THROWS_AS(w.validate(), Error);
  w = LossWeights{};
  w.point = -1.0;
  CHECK_THROWS_AS(w.validate(), Error);
}
