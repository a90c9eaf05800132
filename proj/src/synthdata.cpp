#include "densetrack/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "densetrack/error.hpp"

namespace densetrack::synth {

namespace {

constexpr double kRayEps = 1e-9;
constexpr double kVisibilitySlack = 1e-6;

geometry::Mat3 rot_y(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  geometry::Mat3 r;
  r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return r;
}

Extrinsics look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 down(0.0, 1.0, 0.0);
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Extrinsics e;
  e.rotation.row(0) = x.transpose();
  e.rotation.row(1) = y.transpose();
  e.rotation.row(2) = z.transpose();
  e.translation = -(e.rotation * eye);
  return e;
}

double smallest_positive(double a, double b) {
  if (a > kRayEps) return a;
  if (b > kRayEps) return b;
  return -1.0;
}

Vec3 surface_color(const SceneDescription& scene, int object, const Vec3& world, double time) {
  if (object >= 0) {
    const Sphere& s = scene.spheres[static_cast<size_t>(object)];
    const Vec3 local = rot_y(-s.spin * time) * (world - s.center(time)) / s.radius;
    const double theta = std::atan2(local.x(), local.z());
    const double phi = std::acos(std::clamp(-local.y(), -1.0, 1.0));
    const long cell = static_cast<long>(std::floor(theta / (M_PI / 4.0))) + static_cast<long>(std::floor(phi / (M_PI / 4.0)));
    return (cell & 1) ? s.color_b : s.color_a;
  }
  if (object == -1) {
    const long cell = static_cast<long>(std::floor(world.x() / 0.5)) + static_cast<long>(std::floor(world.z() / 0.5));
    return (cell & 1) ? Vec3(0.35, 0.35, 0.4) : Vec3(0.8, 0.8, 0.75);
  }
  const long cell = static_cast<long>(std::floor(world.x() / 0.7)) + static_cast<long>(std::floor(world.y() / 0.7));
  return (cell & 1) ? Vec3(0.45, 0.55, 0.7) : Vec3(0.6, 0.7, 0.85);
}

Vec3 surface_normal(const SceneDescription& scene, int object, const Vec3& world, double time) {
  if (object >= 0) {
    const Sphere& s = scene.spheres[static_cast<size_t>(object)];
    return (world - s.center(time)) / s.radius;
  }
  if (object == -1) return {0.0, -1.0, 0.0};
  return {0.0, 0.0, -1.0};
}

Vec3 pixel_direction(const Intrinsics& k, int i, int j) {
  return {(i - k.px) / k.fx, (j - k.py) / k.fy, 1.0};
}

Vec3 camera_center(const Extrinsics& pose) { return pose.apply_inverse(Vec3::Zero()); }

Hit pixel_hit(const SceneDescription& scene, const Frame& frame, int i, int j) {
  const Vec3 dir = frame.extrinsics.rotation.transpose() * pixel_direction(frame.intrinsics, i, j);
  return cast_ray(scene, camera_center(frame.extrinsics), dir, frame.time);
}

std::vector<Vec3> fibonacci_sphere(int n) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(n));
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < n; ++k) {
    const double y = 1.0 - 2.0 * (k + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double a = golden * k;
    pts.emplace_back(r * std::cos(a), y, r * std::sin(a));
  }
  return pts;
}

struct VertexSeed {
  int object;
  Vec3 world0;  // world position at time 0
};

std::vector<VertexSeed> scene_vertices(const SceneConfig& cfg, const SceneDescription& scene) {
  std::vector<VertexSeed> out;
  const auto unit = fibonacci_sphere(cfg.vertices_per_sphere);
  for (size_t s = 0; s < scene.spheres.size(); ++s) {
    for (const Vec3& u : unit) out.push_back({static_cast<int>(s), scene.spheres[s].center(0.0) + u * scene.spheres[s].radius});
  }
  if (scene.ground_plane) {
    for (double x = -2.0; x <= 2.0 + 1e-9; x += 0.5) {
      for (double z = -1.0; z <= 3.0 + 1e-9; z += 0.5) out.push_back({-1, Vec3(x, scene.ground_y, z)});
    }
  }
  return out;
}

bool camera_inside_sphere(const SceneDescription& scene, const std::vector<double>& times,
                          const std::vector<Extrinsics>& poses) {
  for (size_t f = 0; f < times.size(); ++f) {
    const Vec3 c = camera_center(poses[f]);
    for (const Sphere& s : scene.spheres) {
      if ((c - s.center(times[f])).norm() <= s.radius + 0.05) return true;
    }
  }
  return false;
}

}  // namespace

const char* to_string(CameraTrajectory t) {
  switch (t) {
    case CameraTrajectory::kStatic:
      return "static";
    case CameraTrajectory::kOrbit:
      return "orbit";
    case CameraTrajectory::kLinear:
      return "linear";
  }
  return "static";
}

CameraTrajectory camera_trajectory_from_string(const std::string& s) {
  if (s == "static") return CameraTrajectory::kStatic;
  if (s == "orbit") return CameraTrajectory::kOrbit;
  if (s == "linear") return CameraTrajectory::kLinear;
  fail(ErrorCode::kConfig, "unknown camera trajectory '" + s + "'");
}

void SceneConfig::validate() const {
  require(num_frames >= 2 && num_frames <= 16, "num_frames must be in [2, 16]", ErrorCode::kConfig);
  require(patch_size > 0, "patch_size must be positive", ErrorCode::kConfig);
  require(height > 0 && width > 0 && height % patch_size == 0 && width % patch_size == 0,
          "image size must be a positive multiple of the patch size", ErrorCode::kConfig);
  require(num_spheres >= 0, "num_spheres must be >= 0", ErrorCode::kConfig);
  require(radius_min > 0.0 && radius_min <= radius_max, "invalid sphere radius range", ErrorCode::kConfig);
  require(speed_min >= 0.0 && speed_min <= speed_max, "invalid motion magnitude range", ErrorCode::kConfig);
  require(spin_max >= 0.0, "spin_max must be >= 0", ErrorCode::kConfig);
  require(fov_deg > 1.0 && fov_deg < 179.0, "fov_deg out of range", ErrorCode::kConfig);
  require(vertices_per_sphere >= 0, "vertices_per_sphere must be >= 0", ErrorCode::kConfig);
}

void AugmentationSpec::validate() const {
  require(brightness >= 0.0 && contrast >= 0.0 && saturation >= 0.0, "jitter strengths must be >= 0", ErrorCode::kConfig);
  require(aspect_min > 0.0 && aspect_min <= aspect_max, "invalid aspect-ratio range", ErrorCode::kConfig);
  require(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0, "crop scale must lie in (0, 1]", ErrorCode::kConfig);
}

bool AugmentationSpec::is_identity() const {
  return brightness == 0.0 && contrast == 0.0 && saturation == 0.0 && aspect_min == 1.0 && aspect_max == 1.0 &&
         scale_min == 1.0 && scale_max == 1.0;
}

Hit cast_ray(const SceneDescription& scene, const Vec3& origin, const Vec3& direction, double time) {
  Hit best;
  best.distance = std::numeric_limits<double>::infinity();
  auto consider = [&](double s, int object) {
    if (s > kRayEps && s < best.distance) {
      best.distance = s;
      best.object = object;
    }
  };
  const double a = direction.squaredNorm();
  for (size_t k = 0; k < scene.spheres.size(); ++k) {
    const Sphere& sp = scene.spheres[k];
    const Vec3 oc = origin - sp.center(time);
    const double b = 2.0 * direction.dot(oc);
    const double c = oc.squaredNorm() - sp.radius * sp.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) continue;
    const double root = std::sqrt(disc);
    // Numerically stable pair of roots.
    const double qv = -0.5 * (b + std::copysign(root, b));
    double s0 = qv / a;
    double s1 = (qv != 0.0) ? c / qv : s0;
    if (s0 > s1) std::swap(s0, s1);
    const double s = smallest_positive(s0, s1);
    if (s > 0.0) consider(s, static_cast<int>(k));
  }
  if (scene.ground_plane && direction.y() != 0.0) consider((scene.ground_y - origin.y()) / direction.y(), -1);
  if (scene.back_wall && direction.z() != 0.0) consider((scene.wall_z - origin.z()) / direction.z(), -2);
  if (best.found()) {
    best.point = origin + best.distance * direction;
  } else {
    best.distance = 0.0;
  }
  return best;
}

Vec3 move_surface_point(const SceneDescription& scene, int object, const Vec3& world, double from_time, double to_time) {
  if (object < 0) return world;
  const Sphere& s = scene.spheres[static_cast<size_t>(object)];
  const Vec3 local = rot_y(-s.spin * from_time) * (world - s.center(from_time));
  return s.center(to_time) + rot_y(s.spin * to_time) * local;
}

bool point_visible(const SceneDescription& scene, int object, const Vec3& world, double time, const Intrinsics& k,
                   const Extrinsics& pose) {
  const Vec3 cam = pose.apply(world);
  if (!(cam.z() > kRayEps)) return false;
  const double u = k.fx * cam.x() / cam.z() + k.px;
  const double v = k.fy * cam.y() / cam.z() + k.py;
  if (!(u >= -0.5 && u < k.width - 0.5 && v >= -0.5 && v < k.height - 0.5)) return false;
  const Vec3 origin = camera_center(pose);
  const Hit hit = cast_ray(scene, origin, world - origin, time);
  (void)object;
  return hit.found() && hit.distance >= 1.0 - kVisibilitySlack;
}

SceneSample render_scene(const SceneConfig& cfg, const SceneDescription& scene, const std::vector<double>& times,
                         const std::vector<Intrinsics>& intrinsics, const std::vector<Extrinsics>& extrinsics) {
  require(!times.empty() && times.size() == intrinsics.size() && times.size() == extrinsics.size(),
          "render_scene: per-frame inputs must be non-empty and of equal length");
  SceneSample out;
  out.config = cfg;
  out.scene = scene;
  out.height = intrinsics[0].height;
  out.width = intrinsics[0].width;
  const int h = out.height;
  const int w = out.width;
  const Vec3 light = Vec3(-0.4, -1.0, -0.6).normalized();
  const Extrinsics& pose0 = extrinsics[0];

  for (size_t f = 0; f < times.size(); ++f) {
    intrinsics[f].validate();
    extrinsics[f].validate();
    require(intrinsics[f].width == w && intrinsics[f].height == h, "all frames must share the image size");
    Frame frame;
    frame.time = times[f];
    frame.intrinsics = intrinsics[f];
    frame.extrinsics = extrinsics[f];
    frame.rgb.assign(static_cast<size_t>(h) * w * 3, 0.0f);
    frame.depth = DepthMap(h, w);
    PointMap pm(h, w);
    pm.source_frame = static_cast<int>(f);
    pm.time_frame = static_cast<int>(f);
    pm.coord_frame = 0;
    for (int j = 0; j < h; ++j) {
      for (int i = 0; i < w; ++i) {
        const size_t p = static_cast<size_t>(j) * w + i;
        const Hit hit = pixel_hit(scene, frame, i, j);
        Vec3 color(0.9, 0.95, 1.0);
        if (hit.found()) {
          const Vec3 n = surface_normal(scene, hit.object, hit.point, frame.time);
          const double shade = 0.35 + 0.65 * std::max(0.0, n.dot(light));
          color = surface_color(scene, hit.object, hit.point, frame.time) * shade;
          // Ray direction has unit camera-z, so the ray parameter is the depth.
          frame.depth.data[p] = hit.distance;
          frame.depth.valid[p] = 1;
          pm.set(j, i, pose0.apply(hit.point));
          pm.valid[p] = 1;
        }
        for (int c = 0; c < 3; ++c) frame.rgb[p * 3 + c] = static_cast<float>(std::clamp(color[c], 0.0, 1.0));
      }
    }
    out.frames.push_back(std::move(frame));
    out.gt_pointmaps.push_back(std::move(pm));
  }

  for (const VertexSeed& v : scene_vertices(cfg, scene)) {
    VertexTrack track;
    track.object = v.object;
    for (size_t f = 0; f < times.size(); ++f) {
      const Vec3 world = move_surface_point(scene, v.object, v.world0, 0.0, times[f]);
      track.positions.push_back(pose0.apply(world));
      track.visible.push_back(point_visible(scene, v.object, world, times[f], intrinsics[f], extrinsics[f]) ? 1 : 0);
    }
    out.vertex_tracks.push_back(std::move(track));
  }
  return out;
}

SceneSample generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double f = 0.5 * cfg.width / std::tan(0.5 * cfg.fov_deg * M_PI / 180.0);
  Intrinsics k;
  k.fx = f;
  k.fy = f;
  k.px = 0.5 * (cfg.width - 1);
  k.py = 0.5 * (cfg.height - 1);
  k.width = cfg.width;
  k.height = cfg.height;

  const Vec3 target(0.0, 0.4, 0.5);
  const Vec3 eye0(0.0, -1.0, -4.5);
  std::vector<double> times;
  std::vector<Extrinsics> poses;
  for (int t = 0; t < cfg.num_frames; ++t) {
    times.push_back(static_cast<double>(t));
    switch (cfg.camera) {
      case CameraTrajectory::kStatic:
        poses.push_back(look_at(eye0, target));
        break;
      case CameraTrajectory::kOrbit:
        poses.push_back(look_at(target + rot_y(cfg.camera_speed * t) * (eye0 - target), target));
        break;
      case CameraTrajectory::kLinear: {
        const Vec3 shift(cfg.camera_speed * t, 0.0, 0.0);
        poses.push_back(look_at(eye0 + shift, target + shift));
        break;
      }
    }
  }

  for (int attempt = 0; attempt < 10; ++attempt) {
    SceneDescription scene;
    scene.ground_plane = cfg.ground_plane;
    scene.back_wall = cfg.back_wall;
    for (int s = 0; s < cfg.num_spheres; ++s) {
      Sphere sp;
      sp.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
      sp.center0 = Vec3(rng.uniform(-1.5, 1.5), scene.ground_y - sp.radius, rng.uniform(-0.5, 2.0));
      const double heading = rng.uniform(0.0, 2.0 * M_PI);
      const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
      sp.velocity = Vec3(std::cos(heading), 0.0, std::sin(heading)) * speed;
      sp.spin = rng.uniform(-cfg.spin_max, cfg.spin_max);
      sp.color_a = Vec3(rng.uniform(0.4, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.1, 0.9));
      sp.color_b = sp.color_a * 0.35;
      scene.spheres.push_back(sp);
    }
    if (camera_inside_sphere(scene, times, poses)) continue;
    return render_scene(cfg, scene, times, std::vector<Intrinsics>(times.size(), k), poses);
  }
  std::ostringstream os;
  os << "could not generate a non-degenerate layout for seed " << cfg.seed << " after 10 attempts";
  fail(ErrorCode::kConfig, os.str());
}

MotionMap make_motion_target(const SceneSample& sample, int t, int q) {
  const int n = sample.num_frames();
  require(t >= 0 && t < n && q >= 0 && q < n, "make_motion_target: frame index out of range");
  const Frame& ft = sample.frames[static_cast<size_t>(t)];
  const Frame& fq = sample.frames[static_cast<size_t>(q)];
  const geometry::Mat3& r0 = sample.frames[0].extrinsics.rotation;
  MotionMap m(sample.height, sample.width);
  m.source_time = t;
  m.query_time = q;
  for (int j = 0; j < sample.height; ++j) {
    for (int i = 0; i < sample.width; ++i) {
      const size_t p = static_cast<size_t>(j) * sample.width + i;
      if (!ft.depth.valid[p]) continue;
      if (t == q) {
        m.valid[p] = 1;
        continue;
      }
      const Hit hit = pixel_hit(sample.scene, ft, i, j);
      if (!hit.found()) continue;
      const Vec3 moved = move_surface_point(sample.scene, hit.object, hit.point, ft.time, fq.time);
      if (!point_visible(sample.scene, hit.object, moved, fq.time, fq.intrinsics, fq.extrinsics)) continue;
      const Vec3 d = r0 * (moved - hit.point);
      m.valid[p] = 1;
      for (int c = 0; c < 3; ++c) m.data[p * 3 + c] = d[c];
    }
  }
  return m;
}

std::vector<SparseTarget> sparse_motion_targets(const std::vector<VertexTrack>& tracks, const std::vector<Frame>& cameras,
                                                int t, int q) {
  require(!cameras.empty(), "sparse_motion_targets: no cameras");
  const int n = static_cast<int>(cameras.size());
  require(t >= 0 && t < n && q >= 0 && q < n, "sparse_motion_targets: frame index out of range");
  const Extrinsics& pose0 = cameras[0].extrinsics;
  const Frame& ft = cameras[static_cast<size_t>(t)];
  std::map<long, SparseTarget> by_pixel;
  for (const VertexTrack& track : tracks) {
    if (!track.visible[static_cast<size_t>(t)] || !track.visible[static_cast<size_t>(q)]) continue;
    const Vec3& pos_t = track.positions[static_cast<size_t>(t)];
    const Vec3 cam = ft.extrinsics.apply(pose0.apply_inverse(pos_t));
    if (!(cam.z() > 0.0)) continue;
    const auto proj = geometry::project(cam, ft.intrinsics);
    const long i = std::lround(proj.u);
    const long j = std::lround(proj.v);
    if (i < 0 || j < 0 || i >= ft.intrinsics.width || j >= ft.intrinsics.height) continue;
    const long key = j * ft.intrinsics.width + i;
    SparseTarget target{Pixel{static_cast<int>(i), static_cast<int>(j)}, track.positions[static_cast<size_t>(q)] - pos_t,
                        proj.depth};
    auto it = by_pixel.find(key);
    if (it == by_pixel.end() || target.depth < it->second.depth) by_pixel[key] = target;
  }
  std::vector<SparseTarget> out;
  out.reserve(by_pixel.size());
  for (auto& [key, target] : by_pixel) out.push_back(target);
  return out;
}

SceneSample augment(const SceneSample& sample, const AugmentationSpec& spec, uint64_t seed) {
  spec.validate();
  if (spec.is_identity()) return sample;
  Rng rng(seed);
  const double brightness = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
  const double contrast = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
  const double saturation = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
  const double aspect = rng.uniform(spec.aspect_min, spec.aspect_max);
  const double scale = rng.uniform(spec.scale_min, spec.scale_max);

  const int h = sample.height;
  const int w = sample.width;
  const double crop_w = w * scale * std::min(1.0, aspect);
  const double crop_h = h * scale * std::min(1.0, 1.0 / aspect);
  if (!(crop_w >= 1.0 && crop_h >= 1.0)) fail(ErrorCode::kInvalidArgument, "center crop degenerates below one pixel");
  const double sx = w / crop_w;
  const double sy = h / crop_h;
  // Continuous image extent is [-0.5, W-0.5); the crop's left/top edges.
  const double left = -0.5 + 0.5 * (w - crop_w);
  const double top = -0.5 + 0.5 * (h - crop_h);

  std::vector<double> times;
  std::vector<Intrinsics> ks;
  std::vector<Extrinsics> poses;
  for (const Frame& f : sample.frames) {
    Intrinsics k = f.intrinsics;
    if (!(scale == 1.0 && aspect == 1.0)) {
      k.fx = f.intrinsics.fx * sx;
      k.fy = f.intrinsics.fy * sy;
      k.px = (f.intrinsics.px - left) * sx - 0.5;
      k.py = (f.intrinsics.py - top) * sy - 0.5;
    }
    if (!(k.px >= 0.0 && k.px < w && k.py >= 0.0 && k.py < h)) {
      fail(ErrorCode::kInvalidArgument, "center crop moves the principal point outside the image");
    }
    times.push_back(f.time);
    ks.push_back(k);
    poses.push_back(f.extrinsics);
  }
  // Cropping then resizing back to H×W is a change of intrinsics, so the
  // analytic scene is rendered again under the new cameras.
  SceneSample out = render_scene(sample.config, sample.scene, times, ks, poses);

  const bool jitter = spec.brightness != 0.0 || spec.contrast != 0.0 || spec.saturation != 0.0;
  if (jitter) {
    for (Frame& f : out.frames) {
      const size_t npix = static_cast<size_t>(h) * w;
      double mean = 0.0;
      for (size_t p = 0; p < npix; ++p) {
        mean += 0.299 * f.rgb[p * 3] + 0.587 * f.rgb[p * 3 + 1] + 0.114 * f.rgb[p * 3 + 2];
      }
      mean /= static_cast<double>(npix);
      for (size_t p = 0; p < npix; ++p) {
        double c[3];
        for (int ch = 0; ch < 3; ++ch) c[ch] = f.rgb[p * 3 + ch] * brightness;
        for (int ch = 0; ch < 3; ++ch) c[ch] = (c[ch] - mean) * contrast + mean;
        const double gray = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        for (int ch = 0; ch < 3; ++ch) {
          f.rgb[p * 3 + ch] = static_cast<float>(std::clamp((c[ch] - gray) * saturation + gray, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

SceneSample subsequence(const SceneSample& sample, const std::vector<int>& frame_indices) {
  require(!frame_indices.empty(), "subsequence: no frames selected");
  for (int idx : frame_indices) require(idx >= 0 && idx < sample.num_frames(), "subsequence: frame index out of range");
  SceneSample out;
  out.config = sample.config;
  out.config.num_frames = static_cast<int>(frame_indices.size());
  out.scene = sample.scene;
  out.height = sample.height;
  out.width = sample.width;
  const Extrinsics& old0 = sample.frames[0].extrinsics;
  const Extrinsics& new0 = sample.frames[static_cast<size_t>(frame_indices[0])].extrinsics;
  const Extrinsics rebase = new0.compose(old0.inverse());
  for (size_t k = 0; k < frame_indices.size(); ++k) {
    const size_t src = static_cast<size_t>(frame_indices[k]);
    out.frames.push_back(sample.frames[src]);
    PointMap pm = geometry::transform_pointmap(sample.gt_pointmaps[src], old0, new0, 0);
    pm.source_frame = static_cast<int>(k);
    pm.time_frame = static_cast<int>(k);
    for (size_t p = 0; p < pm.pixels(); ++p) {
      if (!pm.valid[p]) {
        for (int c = 0; c < 3; ++c) pm.data[p * 3 + c] = 0.0;
      }
    }
    out.gt_pointmaps.push_back(std::move(pm));
  }
  for (const VertexTrack& tr : sample.vertex_tracks) {
    VertexTrack nt;
    nt.object = tr.object;
    for (int idx : frame_indices) {
      nt.positions.push_back(rebase.rotation * tr.positions[static_cast<size_t>(idx)] + rebase.translation);
      nt.visible.push_back(tr.visible[static_cast<size_t>(idx)]);
    }
    out.vertex_tracks.push_back(std::move(nt));
  }
  return out;
}

SequenceDraw sample_batch(const std::vector<DatasetSpec>& datasets, Rng& rng) {
  require(!datasets.empty(), "sample_batch: no datasets registered");
  double total_weight = 0.0;
  for (const DatasetSpec& d : datasets) {
    require(d.weight >= 0.0, "sample_batch: dataset weight must be >= 0");
    require(d.min_length >= 2 && d.min_length <= d.max_length, "sample_batch: invalid length range");
    require(d.min_stride >= 1 && d.min_stride <= d.max_stride, "sample_batch: invalid stride range");
    if (!d.scene_frame_counts.empty() && d.weight > 0.0) total_weight += d.weight;
  }
  require(total_weight > 0.0, "sample_batch: no dataset with scenes and positive weight");

  for (int attempt = 0; attempt < 10000; ++attempt) {
    SequenceDraw draw;
    double pick = rng.uniform() * total_weight;
    draw.dataset = -1;
    for (size_t d = 0; d < datasets.size(); ++d) {
      if (datasets[d].scene_frame_counts.empty() || !(datasets[d].weight > 0.0)) continue;
      draw.dataset = static_cast<int>(d);
      pick -= datasets[d].weight;
      if (pick < 0.0) break;
    }
    const DatasetSpec& ds = datasets[static_cast<size_t>(draw.dataset)];
    draw.scene = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(ds.scene_frame_counts.size()) - 1));
    const int n = ds.scene_frame_counts[static_cast<size_t>(draw.scene)];
    const int length = static_cast<int>(rng.uniform_int(ds.min_length, ds.max_length));
    if (length > n) continue;  // scene too short for the requested span: resample
    const int stride_cap = std::min(ds.max_stride, length > 1 ? (n - 1) / (length - 1) : ds.max_stride);
    if (stride_cap < ds.min_stride) continue;
    draw.stride = static_cast<int>(rng.uniform_int(ds.min_stride, stride_cap));
    const int span = (length - 1) * draw.stride + 1;
    const int start = static_cast<int>(rng.uniform_int(0, n - span));
    for (int k = 0; k < length; ++k) draw.frames.push_back(start + k * draw.stride);
    draw.query = static_cast<int>(rng.uniform_int(0, length - 1));
    return draw;
  }
  fail(ErrorCode::kState, "sample_batch: no scene long enough for the configured sequence lengths");
}

Extrinsics relative_pose(const SceneSample& sample, int t) {
  require(t >= 0 && t < sample.num_frames(), "relative_pose: frame index out of range");
  return sample.frames[static_cast<size_t>(t)].extrinsics.compose(sample.frames[0].extrinsics.inverse());
}

}  // namespace densetrack::synth
