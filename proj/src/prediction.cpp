#include "densetrack/prediction.hpp"

#include <cmath>

namespace densetrack {

std::array<double, 9> encode_camera(const geometry::Extrinsics& relative, const geometry::Intrinsics& k) {
  const Eigen::Vector4d q = geometry::rotation_to_quaternion(relative.rotation);
  return {q[0],
          q[1],
          q[2],
          q[3],
          relative.translation.x(),
          relative.translation.y(),
          relative.translation.z(),
          2.0 * std::atan(0.5 * k.width / k.fx),
          2.0 * std::atan(0.5 * k.height / k.fy)};
}

std::array<double, 2> focal_from_fov(const std::array<double, 9>& enc, int width, int height) {
  return {0.5 * width / std::tan(0.5 * enc[7]), 0.5 * height / std::tan(0.5 * enc[8])};
}

}  // namespace densetrack
