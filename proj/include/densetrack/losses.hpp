#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace densetrack::losses {

struct LossWeights {
  double camera = 5.0;
  double depth = 1.0;
  double point = 1.0;
  double motion = 1.0;
  double alpha = 0.2;      // confidence regularizer
  double huber_eps = 0.1;  // camera Huber threshold

  void validate() const;
};

// Layout of a stack of per-pixel maps: frames × height × width × channels,
// row-major. Masks are frames × height × width.
struct MapShape {
  int frames = 1;
  int height = 1;
  int width = 1;
  int channels = 1;

  size_t pixels() const { return static_cast<size_t>(frames) * height * width; }
  size_t values() const { return pixels() * channels; }
};

// Loss value with analytic gradients w.r.t. the prediction and, where the
// loss uses one, the uncertainty map.
struct LossValue {
  double value = 0.0;
  std::vector<double> d_pred;
  std::vector<double> d_sigma;
  size_t count = 0;         // supervised pixels (or camera residuals)
  bool empty_mask = false;  // no supervised pixel; value defined as 0
};

double huber(double r, double eps);

// Sum over frames and encoding components of Huber(pred - gt).
LossValue camera_loss(std::span<const double> pred, std::span<const double> gt, double eps);

// Mean over valid pixels of the Euclidean residual norm.
LossValue map_regression_loss(std::span<const double> pred, std::span<const double> gt, std::span<const uint8_t> valid,
                              const MapShape& shape);

// Mean over valid pixels of Σ·|residual| - α·log Σ.
LossValue confidence_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> sigma,
                          std::span<const uint8_t> valid, const MapShape& shape, double alpha);

// Mean over pixels whose right and lower neighbours are also valid of
// Σ·|∇pred - ∇gt| with forward differences.
LossValue gradient_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> sigma,
                        std::span<const uint8_t> valid, const MapShape& shape);

// Regression only, over the target's valid mask.
LossValue motion_loss(std::span<const double> pred, std::span<const double> target, std::span<const uint8_t> target_valid,
                      const MapShape& shape);

struct LossComponents {
  double camera = 0.0;
  double depth_reg = 0.0;
  double depth_conf = 0.0;
  double depth_grad = 0.0;
  double point_reg = 0.0;
  double point_conf = 0.0;
  double point_grad = 0.0;
  double motion_reg = 0.0;
  size_t depth_pixels = 0;
  size_t point_pixels = 0;
  size_t motion_pixels = 0;
  bool empty_mask = false;
};

struct LossReport {
  double total = 0.0;
  double camera = 0.0;
  double depth = 0.0;
  double point = 0.0;
  double motion = 0.0;
  LossComponents parts;

  // Flat key/value view for the training log.
  std::map<std::string, double> flat() const;
};

LossReport total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace densetrack::losses
