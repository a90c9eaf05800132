#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "densetrack/geometry.hpp"
#include "densetrack/random.hpp"

namespace densetrack::synth {

using geometry::DepthMap;
using geometry::Extrinsics;
using geometry::Intrinsics;
using geometry::MotionMap;
using geometry::Pixel;
using geometry::PointMap;
using geometry::Vec3;

enum class CameraTrajectory { kStatic, kOrbit, kLinear };

const char* to_string(CameraTrajectory t);
CameraTrajectory camera_trajectory_from_string(const std::string& s);

struct SceneConfig {
  int num_frames = 4;
  int height = 32;
  int width = 32;
  int patch_size = 4;
  int num_spheres = 2;
  double radius_min = 0.4;
  double radius_max = 0.8;
  double speed_min = 0.05;  // scene units per frame
  double speed_max = 0.2;
  double spin_max = 0.0;    // radians per frame about the vertical axis
  CameraTrajectory camera = CameraTrajectory::kStatic;
  double camera_speed = 0.05;  // rad/frame (orbit) or units/frame (linear)
  double fov_deg = 60.0;
  bool ground_plane = true;
  bool back_wall = true;
  int vertices_per_sphere = 96;
  uint64_t seed = 0;

  void validate() const;
};

// Rigidly moving sphere: center(t) = center0 + velocity * t, spinning about
// the world vertical axis through its center by spin * t.
struct Sphere {
  Vec3 center0 = Vec3::Zero();
  double radius = 0.5;
  Vec3 velocity = Vec3::Zero();
  double spin = 0.0;
  Vec3 color_a = Vec3::Ones();
  Vec3 color_b = Vec3::Zero();

  Vec3 center(double time) const { return center0 + velocity * time; }
};

// World frame follows the camera convention: x right, y down, z forward.
struct SceneDescription {
  std::vector<Sphere> spheres;
  bool ground_plane = true;
  double ground_y = 1.0;
  bool back_wall = true;
  double wall_z = 4.0;
};

struct Frame {
  double time = 0.0;            // scene time driving object motion
  std::vector<float> rgb;       // H*W*3, row-major, values in [0,1]
  DepthMap depth;
  Intrinsics intrinsics;
  Extrinsics extrinsics;        // world-to-camera
};

struct VertexTrack {
  int object = 0;
  std::vector<Vec3> positions;   // per frame, frame-0 camera coordinates
  std::vector<uint8_t> visible;  // per frame
};

struct SceneSample {
  SceneConfig config;
  SceneDescription scene;
  int height = 0;
  int width = 0;
  std::vector<Frame> frames;
  std::vector<PointMap> gt_pointmaps;  // frame t pixels at time t, frame-0 coordinates
  std::vector<VertexTrack> vertex_tracks;

  int num_frames() const { return static_cast<int>(frames.size()); }
};

struct SparseTarget {
  Pixel pixel;
  Vec3 displacement;
  double depth = 0.0;
};

struct AugmentationSpec {
  double brightness = 0.0;  // multiplicative jitter half-width
  double contrast = 0.0;
  double saturation = 0.0;
  double aspect_min = 1.0;  // crop aspect relative to the image aspect
  double aspect_max = 1.0;
  double scale_min = 1.0;   // linear crop fraction, in (0, 1]
  double scale_max = 1.0;

  void validate() const;
  bool is_identity() const;
};

// Ray hit against the analytic scene. object: sphere index, -1 ground, -2 wall.
struct Hit {
  double distance = 0.0;  // ray parameter, in units of the direction length
  int object = -3;
  Vec3 point = Vec3::Zero();
  bool found() const { return object > -3; }
};

Hit cast_ray(const SceneDescription& scene, const Vec3& origin, const Vec3& direction, double time);

// World position at `to_time` of the surface point that sits at `world` on
// `object` at `from_time`.
Vec3 move_surface_point(const SceneDescription& scene, int object, const Vec3& world, double from_time, double to_time);

// True when the world point on `object` at `time` is inside the frustum of
// (k, pose) and is the first surface hit along the ray from that camera.
bool point_visible(const SceneDescription& scene, int object, const Vec3& world, double time, const Intrinsics& k,
                   const Extrinsics& pose);

// Renders RGB, depth and pointmaps for given cameras; deterministic.
SceneSample render_scene(const SceneConfig& cfg, const SceneDescription& scene, const std::vector<double>& times,
                         const std::vector<Intrinsics>& intrinsics, const std::vector<Extrinsics>& extrinsics);

SceneSample generate_scene(const SceneConfig& cfg);

// Dense motion from frame t to frame q in frame-0 coordinates; pixels whose
// surface point is occluded or outside the view at q are invalid.
MotionMap make_motion_target(const SceneSample& sample, int t, int q);

std::vector<SparseTarget> sparse_motion_targets(const std::vector<VertexTrack>& tracks, const std::vector<Frame>& cameras,
                                                int t, int q);

SceneSample augment(const SceneSample& sample, const AugmentationSpec& spec, uint64_t seed);

// Keeps the listed frames and re-bases all ground truth on the first kept frame.
SceneSample subsequence(const SceneSample& sample, const std::vector<int>& frame_indices);

// Sequence sampling.
struct DatasetSpec {
  std::string name;
  double weight = 1.0;  // relative sampling frequency
  int min_length = 2;
  int max_length = 10;
  int min_stride = 1;
  int max_stride = 4;
  bool has_motion = true;
  std::vector<int> scene_frame_counts;
};

struct SequenceDraw {
  int dataset = 0;
  int scene = 0;
  int stride = 1;
  std::vector<int> frames;
  int query = 0;  // index into frames
};

SequenceDraw sample_batch(const std::vector<DatasetSpec>& datasets, Rng& rng);

// Frame-0-relative camera of frame t: pose_t ∘ pose_0^-1.
Extrinsics relative_pose(const SceneSample& sample, int t);

}  // namespace densetrack::synth
