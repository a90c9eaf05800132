#include "densetrack/geometry.hpp"

#include <cmath>
#include <sstream>

#include "densetrack/error.hpp"

namespace densetrack::geometry {

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, px, 0.0, fy, py, 0.0, 0.0, 1.0;
  return k;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    std::ostringstream os;
    os << "degenerate focal length (fx=" << fx << ", fy=" << fy << ")";
    fail(ErrorCode::kGeometry, os.str());
  }
  if (width <= 0 || height <= 0) fail(ErrorCode::kGeometry, "image size must be positive");
  if (!(px >= 0.0 && px < width) || !(py >= 0.0 && py < height)) {
    std::ostringstream os;
    os << "principal point (" << px << ", " << py << ") outside " << width << "x" << height << " image";
    fail(ErrorCode::kGeometry, os.str());
  }
}

Extrinsics Extrinsics::inverse() const {
  Extrinsics out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

Extrinsics Extrinsics::compose(const Extrinsics& other) const {
  Extrinsics out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

void Extrinsics::validate(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (!(ortho <= tol) || !(std::abs(det - 1.0) <= tol)) {
    std::ostringstream os;
    os << "rotation is not orthonormal (|R^T R - I|max=" << ortho << ", det=" << det << ")";
    fail(ErrorCode::kGeometry, os.str());
  }
  if (!translation.allFinite()) fail(ErrorCode::kGeometry, "non-finite translation");
}

Vec3 unproject(Pixel pixel, double depth, const Intrinsics& k) {
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) fail(ErrorCode::kGeometry, "non-invertible intrinsics (degenerate focal)");
  if (!(depth > 0.0) || !std::isfinite(depth)) fail(ErrorCode::kGeometry, "depth must be positive and finite");
  if (pixel.i < 0 || pixel.j < 0 || pixel.i >= k.width || pixel.j >= k.height) {
    fail(ErrorCode::kGeometry, "pixel outside image bounds");
  }
  // Closed-form inverse of the upper-triangular calibration matrix.
  const double x = (pixel.i * depth - k.px * depth) / k.fx;
  const double y = (pixel.j * depth - k.py * depth) / k.fy;
  return {x, y, depth};
}

Projection project(const Vec3& point, const Intrinsics& k) {
  if (!(point.z() > 0.0)) fail(ErrorCode::kGeometry, "point is behind the camera");
  const double z = point.z();
  return {k.fx * point.x() / z + k.px, k.fy * point.y() / z + k.py, z};
}

PointMap transform_pointmap(const PointMap& pm, const Extrinsics& pose_src, const Extrinsics& pose_dst, int dst_frame) {
  pose_src.validate();
  pose_dst.validate();
  // src camera -> world -> dst camera, folded into one rigid transform.
  const Extrinsics rel = pose_dst.compose(pose_src.inverse());
  PointMap out = pm;
  out.coord_frame = dst_frame;
  for (size_t p = 0; p < pm.pixels(); ++p) {
    const double* s = &pm.data[p * 3];
    const Vec3 x = rel.rotation * Vec3(s[0], s[1], s[2]) + rel.translation;
    double* d = &out.data[p * 3];
    d[0] = x.x();
    d[1] = x.y();
    d[2] = x.z();
  }
  return out;
}

MotionMap motion_field(const PointMap& x_q, const PointMap& x_t) {
  if (x_q.height != x_t.height || x_q.width != x_t.width) fail(ErrorCode::kInvalidArgument, "pointmap shapes differ");
  if (x_q.source_frame != x_t.source_frame || x_q.coord_frame != x_t.coord_frame) {
    fail(ErrorCode::kInvalidArgument, "pointmaps must share source and coordinate frames");
  }
  MotionMap m(x_t.height, x_t.width);
  m.source_time = x_t.time_frame;
  m.query_time = x_q.time_frame;
  for (size_t p = 0; p < m.pixels(); ++p) {
    m.valid[p] = (x_q.valid[p] && x_t.valid[p]) ? 1 : 0;
    for (int c = 0; c < 3; ++c) m.data[p * 3 + c] = x_q.data[p * 3 + c] - x_t.data[p * 3 + c];
  }
  return m;
}

Eigen::Vector4d rotation_to_quaternion(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out;
}

Mat3 quaternion_to_rotation(const Eigen::Vector4d& q) {
  Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  return quat.normalized().toRotationMatrix();
}

}  // namespace densetrack::geometry
