#include "densetrack/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "densetrack/config.hpp"
#include "densetrack/error.hpp"

namespace densetrack::io {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "array I/O assumes a little-endian host");

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

constexpr char kArrayMagic[8] = {'D', 'T', 'A', 'R', 'R', '0', '0', '1'};

template <typename T>
void write_array_impl(const std::string& path, const std::vector<T>& data, uint32_t dtype, int h, int w, int c) {
  require(h > 0 && w > 0 && c > 0, "write_array: dimensions must be positive");
  require(data.size() == static_cast<size_t>(h) * w * c, "write_array: data size does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  const uint32_t dims[4] = {dtype, static_cast<uint32_t>(h), static_cast<uint32_t>(w), static_cast<uint32_t>(c)};
  out.write(kArrayMagic, sizeof(kArrayMagic));
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) fail(ErrorCode::kIo, "short write to " + path);
}

template <typename T>
std::vector<T> read_array_impl(const std::string& path, uint32_t dtype, int& h, int& w, int& c) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  char magic[8];
  uint32_t dims[4];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, kArrayMagic, sizeof(magic)) != 0) fail(ErrorCode::kIo, path + " is not an array file");
  if (dims[0] != dtype) fail(ErrorCode::kIo, path + ": unexpected element type");
  h = static_cast<int>(dims[1]);
  w = static_cast<int>(dims[2]);
  c = static_cast<int>(dims[3]);
  std::vector<T> data(static_cast<size_t>(h) * w * c);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!in) fail(ErrorCode::kIo, path + ": truncated payload");
  return data;
}

std::string frame_file(const char* stem, int f, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%02d.%s", stem, f, ext);
  return buf;
}

json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

bool same_file_bytes(const fs::path& a, const std::vector<char>& expected) {
  std::ifstream in(a, std::ios::binary);
  std::vector<char> got((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return got == expected;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + p.string());
  return {(std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_png(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb) {
  require(width > 0 && height > 0, "write_png: empty image");
  require(rgb.size() == static_cast<size_t>(width) * height * 3, "write_png: buffer size does not match image size");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(ErrorCode::kIo, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::kIo, "libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng: error while writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png(const std::string& path, int& width, int& height) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorCode::kIo, "cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::kIo, "libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "libpng: error while reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, path + ": only 8-bit RGB images are supported");
  }
  std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) png_read_row(png, rgb.data() + static_cast<size_t>(y) * width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return rgb;
}

std::vector<uint8_t> to_rgb8(const std::vector<float>& rgb01) {
  std::vector<uint8_t> out(rgb01.size());
  for (size_t i = 0; i < rgb01.size(); ++i) {
    out[i] = static_cast<uint8_t>(std::lround(std::clamp(rgb01[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

void write_array(const std::string& path, const std::vector<double>& data, int h, int w, int c) {
  write_array_impl(path, data, 0, h, w, c);
}

void write_array(const std::string& path, const std::vector<uint8_t>& data, int h, int w, int c) {
  write_array_impl(path, data, 1, h, w, c);
}

std::vector<double> read_array_f64(const std::string& path, int& h, int& w, int& c) {
  return read_array_impl<double>(path, 0, h, w, c);
}

std::vector<uint8_t> read_array_u8(const std::string& path, int& h, int& w, int& c) {
  return read_array_impl<uint8_t>(path, 1, h, w, c);
}

void write_scene_bundle(const std::string& dir, const synth::SceneSample& s) {
  fs::create_directories(dir);
  const fs::path root(dir);
  const int n = s.num_frames();
  json frames = json::array();
  for (int f = 0; f < n; ++f) {
    const auto& fr = s.frames[static_cast<size_t>(f)];
    const auto& pm = s.gt_pointmaps[static_cast<size_t>(f)];
    write_png((root / frame_file("rgb", f, "png")).string(), s.width, s.height, to_rgb8(fr.rgb));
    write_array((root / frame_file("depth", f, "bin")).string(), fr.depth.data, s.height, s.width, 1);
    write_array((root / frame_file("depth_valid", f, "bin")).string(), fr.depth.valid, s.height, s.width, 1);
    write_array((root / frame_file("points", f, "bin")).string(), pm.data, s.height, s.width, 3);
    write_array((root / frame_file("points_valid", f, "bin")).string(), pm.valid, s.height, s.width, 1);
    const auto& k = fr.intrinsics;
    const Eigen::Matrix3d& r = fr.extrinsics.rotation;
    frames.push_back({{"time", fr.time},
                      {"rgb", frame_file("rgb", f, "png")},
                      {"depth", frame_file("depth", f, "bin")},
                      {"points", frame_file("points", f, "bin")},
                      {"intrinsics", {{"fx", k.fx}, {"fy", k.fy}, {"px", k.px}, {"py", k.py}}},
                      {"rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}},
                      {"translation", vec3(fr.extrinsics.translation)}});
  }
  json spheres = json::array();
  for (const auto& sp : s.scene.spheres) {
    spheres.push_back({{"center0", vec3(sp.center0)},
                       {"radius", sp.radius},
                       {"velocity", vec3(sp.velocity)},
                       {"spin", sp.spin}});
  }
  std::vector<double> track_pos;
  std::vector<uint8_t> track_vis;
  for (const auto& t : s.vertex_tracks) {
    for (int f = 0; f < n; ++f) {
      const auto& p = t.positions[static_cast<size_t>(f)];
      track_pos.insert(track_pos.end(), {p.x(), p.y(), p.z()});
      track_vis.push_back(t.visible[static_cast<size_t>(f)]);
    }
  }
  const int v = static_cast<int>(s.vertex_tracks.size());
  if (v > 0) {
    write_array((root / "tracks.bin").string(), track_pos, v, n, 3);
    write_array((root / "tracks_visible.bin").string(), track_vis, v, n, 1);
  }
  const json manifest = {{"format", "densetrack-scene-bundle/1"},
                         {"height", s.height},
                         {"width", s.width},
                         {"num_frames", n},
                         {"scene_config", json::parse(config::to_json(s.config))},
                         {"frames", frames},
                         {"spheres", spheres},
                         {"vertex_tracks", v}};
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

synth::SceneSample load_scene_bundle(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) fail(ErrorCode::kIo, "no manifest.json in " + dir);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kIo, dir + "/manifest.json: " + e.what());
  }
  if (manifest.value("format", "") != "densetrack-scene-bundle/1") fail(ErrorCode::kIo, dir + ": unknown bundle format");
  const synth::SceneConfig cfg = config::scene_config_from_json(manifest.at("scene_config").dump());
  synth::SceneSample s = synth::generate_scene(cfg);

  // The stored arrays must match the regenerated scene exactly; anything
  // else means the bundle was edited or produced by a different generator.
  const fs::path tmp = fs::temp_directory_path() / ("dt_bundle_check_" + std::to_string(std::hash<std::string>{}(dir)));
  fs::remove_all(tmp);
  write_scene_bundle(tmp.string(), s);
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename();
    if (name == "manifest.json") continue;
    if (!fs::exists(tmp / name) || !same_file_bytes(entry.path(), read_bytes(tmp / name))) {
      fs::remove_all(tmp);
      fail(ErrorCode::kIo, dir + ": " + name.string() + " does not match the scene regenerated from its config");
    }
  }
  fs::remove_all(tmp);
  return s;
}

void write_ply(const std::string& path, const std::vector<std::array<double, 3>>& points,
               const std::vector<std::array<uint8_t, 3>>& colors) {
  require(points.size() == colors.size(), "write_ply: one color per point required");
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char buf[160];
  for (size_t i = 0; i < points.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %d %d\n", points[i][0], points[i][1], points[i][2], colors[i][0],
                  colors[i][1], colors[i][2]);
    out << buf;
  }
}

Canvas::Canvas(int width, int height, std::array<uint8_t, 3> background) : w_(width), h_(height) {
  require(width > 0 && height > 0, "Canvas: empty size");
  px_.resize(static_cast<size_t>(w_) * h_ * 3);
  for (size_t i = 0; i < px_.size(); i += 3) std::copy(background.begin(), background.end(), px_.begin() + i);
}

void Canvas::set(int x, int y, std::array<uint8_t, 3> c) {
  if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
  std::copy(c.begin(), c.end(), px_.begin() + (static_cast<size_t>(y) * w_ + x) * 3);
}

void Canvas::line(double x0, double y0, double x1, double y1, std::array<uint8_t, 3> c) {
  const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

void Canvas::dot(double x, double y, int radius, std::array<uint8_t, 3> c) {
  const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) set(cx + dx, cy + dy, c);
    }
  }
}

void Canvas::rect(int x0, int y0, int x1, int y1, std::array<uint8_t, 3> c) {
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) set(x, y, c);
  }
}

void Canvas::blit_scaled(const std::vector<float>& rgb01, int src_w, int src_h, int scale) {
  const auto rgb = to_rgb8(rgb01);
  for (int y = 0; y < src_h * scale; ++y) {
    for (int x = 0; x < src_w * scale; ++x) {
      const size_t s = (static_cast<size_t>(y / scale) * src_w + x / scale) * 3;
      set(x, y, {rgb[s], rgb[s + 1], rgb[s + 2]});
    }
  }
}

void Canvas::save(const std::string& path) const { write_png(path, w_, h_, px_); }

void plot_series(const std::string& path, const std::vector<Series>& series, int width, int height) {
  double xmax = 0.0, ymax = 0.0;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "plot_series: x and y lengths differ");
    for (double v : s.x) xmax = std::max(xmax, v);
    for (double v : s.y) ymax = std::max(ymax, v);
  }
  if (xmax <= 0.0) xmax = 1.0;
  if (ymax <= 0.0) ymax = 1.0;
  ymax *= 1.05;
  Canvas c(width, height);
  const int left = 50, right = width - 20, top = 20, bottom = height - 40;
  const std::array<uint8_t, 3> axis{0, 0, 0}, grid{225, 225, 225};
  for (int k = 1; k <= 4; ++k) {
    const int y = bottom - (bottom - top) * k / 4;
    const int x = left + (right - left) * k / 4;
    c.line(left, y, right, y, grid);
    c.line(x, top, x, bottom, grid);
    c.line(left - 5, y, left, y, axis);
    c.line(x, bottom, x, bottom + 5, axis);
  }
  c.line(left, bottom, right, bottom, axis);
  c.line(left, top, left, bottom, axis);
  auto to_px = [&](double x, double y) {
    return std::make_pair(left + (right - left) * x / xmax, bottom - (bottom - top) * y / ymax);
  };
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    for (size_t i = 0; i < s.x.size(); ++i) {
      const auto [px, py] = to_px(s.x[i], s.y[i]);
      c.dot(px, py, 3, s.color);
      if (i > 0) {
        const auto [qx, qy] = to_px(s.x[i - 1], s.y[i - 1]);
        c.line(qx, qy, px, py, s.color);
      }
    }
    // Legend swatch per series, top right.
    const int ly = top + 8 + static_cast<int>(si) * 16;
    c.rect(right - 30, ly, right - 10, ly + 8, s.color);
  }
  c.save(path);
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorCode::kIo, "cannot append to " + path);
  out << line << '\n';
}

}  // namespace densetrack::io
