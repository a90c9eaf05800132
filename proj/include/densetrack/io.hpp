#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densetrack/synthdata.hpp"

namespace densetrack::io {

// 8-bit RGB, row-major.
void write_png(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb);
std::vector<uint8_t> read_png(const std::string& path, int& width, int& height);

std::vector<uint8_t> to_rgb8(const std::vector<float>& rgb01);

// Raw array file: "DTARR001", u32 dtype (0 = f64, 1 = u8), u32 H, W, C,
// then little-endian payload.
void write_array(const std::string& path, const std::vector<double>& data, int h, int w, int c);
void write_array(const std::string& path, const std::vector<uint8_t>& data, int h, int w, int c);
std::vector<double> read_array_f64(const std::string& path, int& h, int& w, int& c);
std::vector<uint8_t> read_array_u8(const std::string& path, int& h, int& w, int& c);

// Scene bundle directory:
//   manifest.json          scene config, cameras, spheres, file list
//   rgb_XX.png             frame images
//   depth_XX.bin           H×W×1 f64, plus depth_valid_XX.bin u8
//   points_XX.bin          H×W×3 f64 ground-truth pointmap (frame-0 coords)
//   points_valid_XX.bin    H×W×1 u8
//   tracks.bin             V×N×3 f64 vertex positions, tracks_visible.bin u8
void write_scene_bundle(const std::string& dir, const synth::SceneSample& sample);
// Regenerates the scene from the stored config and checks that it matches
// the stored arrays byte for byte.
synth::SceneSample load_scene_bundle(const std::string& dir);

// ASCII PLY with per-vertex RGB.
void write_ply(const std::string& path, const std::vector<std::array<double, 3>>& points,
               const std::vector<std::array<uint8_t, 3>>& colors);

// Minimal raster canvas for plots and overlays.
class Canvas {
 public:
  Canvas(int width, int height, std::array<uint8_t, 3> background = {255, 255, 255});
  int width() const { return w_; }
  int height() const { return h_; }
  void set(int x, int y, std::array<uint8_t, 3> c);
  void line(double x0, double y0, double x1, double y1, std::array<uint8_t, 3> c);
  void dot(double x, double y, int radius, std::array<uint8_t, 3> c);
  void rect(int x0, int y0, int x1, int y1, std::array<uint8_t, 3> c);
  void blit_scaled(const std::vector<float>& rgb01, int src_w, int src_h, int scale);
  void save(const std::string& path) const;

 private:
  int w_, h_;
  std::vector<uint8_t> px_;
};

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::array<uint8_t, 3> color;
};

// Line plot with axes and tick marks; axes start at zero.
void plot_series(const std::string& path, const std::vector<Series>& series, int width = 640, int height = 420);

// Appends one line to a text file.
void append_line(const std::string& path, const std::string& line);

}  // namespace densetrack::io
