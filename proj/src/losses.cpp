#include "densetrack/losses.hpp"

#include <cmath>

#include "densetrack/error.hpp"

namespace densetrack::losses {

namespace {

void check_sizes(std::span<const double> pred, std::span<const double> gt, std::span<const uint8_t> valid,
                 const MapShape& shape) {
  require(pred.size() == shape.values() && gt.size() == shape.values(), "loss: map size does not match shape");
  require(valid.size() == shape.pixels(), "loss: mask size does not match shape");
}

void check_sigma(std::span<const double> sigma, std::span<const uint8_t> valid, const MapShape& shape) {
  require(sigma.size() == shape.pixels(), "loss: uncertainty map size does not match shape");
  for (size_t p = 0; p < shape.pixels(); ++p) {
    if (valid[p] && !(sigma[p] > 0.0)) fail(ErrorCode::kNumeric, "loss: uncertainty must be positive on supervised pixels");
  }
}

double residual_norm(const double* a, const double* b, int channels, double* r) {
  double s = 0.0;
  for (int c = 0; c < channels; ++c) {
    r[c] = a[c] - b[c];
    s += r[c] * r[c];
  }
  return std::sqrt(s);
}

}  // namespace

void LossWeights::validate() const {
  require(camera >= 0.0 && depth >= 0.0 && point >= 0.0 && motion >= 0.0 && alpha >= 0.0,
          "loss weights must be non-negative", ErrorCode::kConfig);
  require(huber_eps > 0.0, "Huber threshold must be positive", ErrorCode::kConfig);
}

double huber(double r, double eps) {
  const double a = std::abs(r);
  return a < eps ? 0.5 * r * r : eps * (a - 0.5 * eps);
}

LossValue camera_loss(std::span<const double> pred, std::span<const double> gt, double eps) {
  require(pred.size() == gt.size(), "camera_loss: prediction and ground truth lengths differ");
  require(eps > 0.0, "camera_loss: Huber threshold must be positive");
  LossValue out;
  out.d_pred.assign(pred.size(), 0.0);
  out.count = pred.size();
  for (size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - gt[i];
    out.value += huber(r, eps);
    out.d_pred[i] = std::abs(r) < eps ? r : eps * (r > 0.0 ? 1.0 : -1.0);
  }
  return out;
}

LossValue map_regression_loss(std::span<const double> pred, std::span<const double> gt, std::span<const uint8_t> valid,
                              const MapShape& shape) {
  check_sizes(pred, gt, valid, shape);
  LossValue out;
  out.d_pred.assign(pred.size(), 0.0);
  const int ch = shape.channels;
  std::vector<double> r(static_cast<size_t>(ch));
  for (size_t p = 0; p < shape.pixels(); ++p) {
    if (!valid[p]) continue;
    ++out.count;
    const double n = residual_norm(&pred[p * ch], &gt[p * ch], ch, r.data());
    out.value += n;
    if (n > 0.0) {
      for (int c = 0; c < ch; ++c) out.d_pred[p * ch + c] = r[static_cast<size_t>(c)] / n;
    }
  }
  if (out.count == 0) {
    out.empty_mask = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(out.count);
  out.value *= inv;
  for (double& g : out.d_pred) g *= inv;
  return out;
}

LossValue confidence_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> sigma,
                          std::span<const uint8_t> valid, const MapShape& shape, double alpha) {
  check_sizes(pred, gt, valid, shape);
  check_sigma(sigma, valid, shape);
  LossValue out;
  out.d_pred.assign(pred.size(), 0.0);
  out.d_sigma.assign(sigma.size(), 0.0);
  const int ch = shape.channels;
  std::vector<double> r(static_cast<size_t>(ch));
  for (size_t p = 0; p < shape.pixels(); ++p) {
    if (!valid[p]) continue;
    ++out.count;
    const double n = residual_norm(&pred[p * ch], &gt[p * ch], ch, r.data());
    out.value += sigma[p] * n - alpha * std::log(sigma[p]);
    out.d_sigma[p] = n - alpha / sigma[p];
    if (n > 0.0) {
      for (int c = 0; c < ch; ++c) out.d_pred[p * ch + c] = sigma[p] * r[static_cast<size_t>(c)] / n;
    }
  }
  if (out.count == 0) {
    out.empty_mask = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(out.count);
  out.value *= inv;
  for (double& g : out.d_pred) g *= inv;
  for (double& g : out.d_sigma) g *= inv;
  return out;
}

LossValue gradient_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> sigma,
                        std::span<const uint8_t> valid, const MapShape& shape) {
  check_sizes(pred, gt, valid, shape);
  check_sigma(sigma, valid, shape);
  LossValue out;
  out.d_pred.assign(pred.size(), 0.0);
  out.d_sigma.assign(sigma.size(), 0.0);
  const int ch = shape.channels;
  const size_t w = static_cast<size_t>(shape.width);
  std::vector<double> ex(static_cast<size_t>(ch)), ey(static_cast<size_t>(ch));
  // First pass accumulates unnormalized sums; gradients are scaled afterwards.
  for (int f = 0; f < shape.frames; ++f) {
    for (int j = 0; j + 1 < shape.height; ++j) {
      for (int i = 0; i + 1 < shape.width; ++i) {
        const size_t p = (static_cast<size_t>(f) * shape.height + j) * w + i;
        const size_t px = p + 1;
        const size_t py = p + w;
        if (!valid[p] || !valid[px] || !valid[py]) continue;
        ++out.count;
        double s = 0.0;
        for (int c = 0; c < ch; ++c) {
          const double gx_pred = pred[px * ch + c] - pred[p * ch + c];
          const double gx_gt = gt[px * ch + c] - gt[p * ch + c];
          const double gy_pred = pred[py * ch + c] - pred[p * ch + c];
          const double gy_gt = gt[py * ch + c] - gt[p * ch + c];
          ex[static_cast<size_t>(c)] = gx_pred - gx_gt;
          ey[static_cast<size_t>(c)] = gy_pred - gy_gt;
          s += ex[static_cast<size_t>(c)] * ex[static_cast<size_t>(c)] + ey[static_cast<size_t>(c)] * ey[static_cast<size_t>(c)];
        }
        const double n = std::sqrt(s);
        out.value += sigma[p] * n;
        out.d_sigma[p] += n;
        if (n > 0.0) {
          const double k = sigma[p] / n;
          for (int c = 0; c < ch; ++c) {
            const double gx = k * ex[static_cast<size_t>(c)];
            const double gy = k * ey[static_cast<size_t>(c)];
            out.d_pred[px * ch + c] += gx;
            out.d_pred[py * ch + c] += gy;
            out.d_pred[p * ch + c] -= gx + gy;
          }
        }
      }
    }
  }
  if (out.count == 0) {
    out.empty_mask = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(out.count);
  out.value *= inv;
  for (double& g : out.d_pred) g *= inv;
  for (double& g : out.d_sigma) g *= inv;
  return out;
}

LossValue motion_loss(std::span<const double> pred, std::span<const double> target, std::span<const uint8_t> target_valid,
                      const MapShape& shape) {
  return map_regression_loss(pred, target, target_valid, shape);
}

std::map<std::string, double> LossReport::flat() const {
  return {{"total", total},
          {"camera", camera},
          {"depth", depth},
          {"depth.reg", parts.depth_reg},
          {"depth.conf", parts.depth_conf},
          {"depth.grad", parts.depth_grad},
          {"point", point},
          {"point.reg", parts.point_reg},
          {"point.conf", parts.point_conf},
          {"point.grad", parts.point_grad},
          {"motion", motion},
          {"motion.reg", parts.motion_reg},
          {"pixels.depth", static_cast<double>(parts.depth_pixels)},
          {"pixels.point", static_cast<double>(parts.point_pixels)},
          {"pixels.motion", static_cast<double>(parts.motion_pixels)},
          {"empty_mask", parts.empty_mask ? 1.0 : 0.0}};
}

LossReport total_loss(const LossComponents& c, const LossWeights& w) {
  LossReport r;
  r.parts = c;
  r.camera = c.camera;
  r.depth = c.depth_reg + c.depth_conf + c.depth_grad;
  r.point = c.point_reg + c.point_conf + c.point_grad;
  r.motion = c.motion_reg;
  r.total = w.camera * r.camera + w.depth * r.depth + w.point * r.point + w.motion * r.motion;
  return r;
}

}  // namespace densetrack::losses
