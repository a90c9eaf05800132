#pragma once

#include <array>
#include <vector>

#include "densetrack/synthdata.hpp"

namespace densetrack {

// Per-frame model outputs. Maps are row-major H×W(×C) per frame, frames
// concatenated; points and motion are in frame-0 camera coordinates.
struct PredictionBundle {
  int frames = 0;
  int height = 0;
  int width = 0;
  int query = 0;
  std::vector<float> points;       // N*H*W*3
  std::vector<float> point_sigma;  // N*H*W, > 1
  std::vector<float> depth;        // N*H*W
  std::vector<float> depth_sigma;  // N*H*W, > 1
  std::vector<float> motion;       // N*H*W*3; empty when the motion head is off
  std::vector<float> camera;       // N*9: quaternion (w,x,y,z), translation, fov pair

  size_t pixel_index(int frame, int row, int col) const {
    return (static_cast<size_t>(frame) * height + row) * width + col;
  }
};

// Anything that maps a sequence plus a query frame to dense predictions.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual PredictionBundle predict(const synth::SceneSample& sequence, int query) = 0;
};

// 9-number camera encoding of a frame-0-relative pose plus intrinsics.
std::array<double, 9> encode_camera(const geometry::Extrinsics& relative, const geometry::Intrinsics& k);
// Focal lengths recovered from the fov pair of an encoding.
std::array<double, 2> focal_from_fov(const std::array<double, 9>& enc, int width, int height);

}  // namespace densetrack
