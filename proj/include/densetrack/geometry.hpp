#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace densetrack::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole calibration. Pixels use (i = column, j = row) with centers at
// integer coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double px = 0.0;
  double py = 0.0;
  int width = 1;
  int height = 1;

  Mat3 matrix() const;
  // Throws kGeometry when the calibration violates the pinhole invariants.
  void validate() const;
  bool operator==(const Intrinsics&) const = default;
};

// World-to-camera rigid transform: x_cam = rotation * x_world + translation.
struct Extrinsics {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Extrinsics identity() { return {}; }
  Vec3 apply(const Vec3& world) const { return rotation * world + translation; }
  Vec3 apply_inverse(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  Extrinsics inverse() const;
  // this ∘ other: first other, then this.
  Extrinsics compose(const Extrinsics& other) const;
  void validate(double tol = 1e-6) const;
};

struct Pixel {
  int i = 0;  // column
  int j = 0;  // row
  bool operator==(const Pixel&) const = default;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

// H×W grid of 3D positions of frame `source_frame` pixels at the time of
// `time_frame`, expressed in camera `coord_frame`. Indices are zero-based.
struct PointMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;    // (row * width + col) * 3 + channel
  std::vector<uint8_t> valid;  // row * width + col
  int source_frame = 0;
  int time_frame = 0;
  int coord_frame = 0;

  PointMap() = default;
  PointMap(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0), valid(static_cast<size_t>(h) * w, 0) {}

  size_t pixels() const { return static_cast<size_t>(height) * width; }
  Vec3 at(int row, int col) const {
    const double* p = &data[(static_cast<size_t>(row) * width + col) * 3];
    return {p[0], p[1], p[2]};
  }
  void set(int row, int col, const Vec3& x) {
    double* p = &data[(static_cast<size_t>(row) * width + col) * 3];
    p[0] = x.x();
    p[1] = x.y();
    p[2] = x.z();
  }
  bool is_valid(int row, int col) const { return valid[static_cast<size_t>(row) * width + col] != 0; }
};

struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0), valid(static_cast<size_t>(h) * w, 0) {}
  size_t pixels() const { return static_cast<size_t>(height) * width; }
};

// Per-pixel displacement X_q - X_t of frame-t pixels, plus validity.
struct MotionMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::vector<uint8_t> valid;
  int source_time = 0;
  int query_time = 0;

  MotionMap() = default;
  MotionMap(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0), valid(static_cast<size_t>(h) * w, 0) {}
  size_t pixels() const { return static_cast<size_t>(height) * width; }
  Vec3 at(int row, int col) const {
    const double* p = &data[(static_cast<size_t>(row) * width + col) * 3];
    return {p[0], p[1], p[2]};
  }
};

// K^-1 · (i·d, j·d, d).
Vec3 unproject(Pixel pixel, double depth, const Intrinsics& k);

// Real-valued pixel coordinates and depth of a camera-frame point.
Projection project(const Vec3& point, const Intrinsics& k);

// Re-expresses a pointmap given in camera `pose_src` coordinates in camera
// `pose_dst` coordinates; `dst_frame` becomes the new coord_frame tag.
PointMap transform_pointmap(const PointMap& pm, const Extrinsics& pose_src, const Extrinsics& pose_dst, int dst_frame);

// x_q - x_t elementwise; validity is the conjunction of both inputs.
MotionMap motion_field(const PointMap& x_q, const PointMap& x_t);

// Unit quaternion (w, x, y, z) with w >= 0.
Eigen::Vector4d rotation_to_quaternion(const Mat3& r);
Mat3 quaternion_to_rotation(const Eigen::Vector4d& q);

}  // namespace densetrack::geometry
