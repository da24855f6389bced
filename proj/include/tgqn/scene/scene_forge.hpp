#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgqn/core/rng.hpp"
#include "tgqn/core/tensor.hpp"
#include "tgqn/scene/geometry.hpp"

namespace tgqn::scene {

using Rgb = std::array<double, 3>;

enum class Shape { kSphere, kBox };
enum class CameraMode { kRing, kFree };

inline std::string camera_mode_name(CameraMode m) {
  return m == CameraMode::kRing ? "ring" : "free";
}
inline CameraMode camera_mode_from(const std::string& s) {
  if (s == "ring") return CameraMode::kRing;
  if (s == "free") return CameraMode::kFree;
  throw std::invalid_argument("unknown camera mode: " + s);
}

// Camera pose: position in room-centred metres, yaw about +y, pitch about
// the camera's right axis. Roll is always zero.
struct PoseSpec {
  Vec3 position;
  double yaw = 0;    // [-pi, pi)
  double pitch = 0;  // [-pi/2, pi/2]
};

struct ObjectSpec {
  Shape shape = Shape::kSphere;
  Vec3 center;
  double scale = 0.5;  // sphere radius or box half-extent
  Rgb color = {0.5, 0.5, 0.5};
};

// Full procedural description of one room; rendering is a pure function of
// this plus a pose.
struct SceneSpec {
  double room_half_extent = 2.0;
  Rgb wall_color = {0.8, 0.8, 0.8};
  Rgb floor_color = {0.4, 0.4, 0.4};
  std::vector<ObjectSpec> objects;
  Vec3 light_position;
  std::int64_t seed = 0;
};

// RGB image, H x W x 3, values in [0, 1].
using Frame = Tensor<float>;

struct Episode {
  SceneSpec scene;
  std::vector<Frame> frames;
  std::vector<PoseSpec> poses;
};

struct GeneratorConfig {
  double room_half_extent = 2.0;
  int max_objects = 3;
  double min_scale = 0.35;
  double max_scale = 0.75;
  double wall_margin = 0.05;       // min clearance between object and wall
  double ring_radius_frac = 0.72;  // ring radius as a fraction of the extent
  double ring_height = 0.0;
  double ring_pitch = 0.0;
  double free_pitch_range = M_PI / 6.0;
  double free_position_margin = 0.15;  // camera clearance from walls
  int placement_retries = 100;
  std::vector<Rgb> palette = {
      {0.90, 0.12, 0.14}, {0.13, 0.55, 0.87}, {0.16, 0.72, 0.25},
      {0.95, 0.77, 0.06}, {0.58, 0.20, 0.75}, {0.95, 0.45, 0.10},
      {0.10, 0.75, 0.72}, {0.85, 0.30, 0.55}, {0.55, 0.35, 0.20},
      {0.92, 0.92, 0.92}};
};

struct RenderOptions {
  double fov_y_deg = 60.0;
  double ambient = 0.35;
  bool light_enabled = true;
};

struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void validate_generator_config(const GeneratorConfig& cfg) {
  if (cfg.room_half_extent <= 0)
    throw std::invalid_argument("generator config: room extent must be positive");
  if (cfg.palette.empty())
    throw std::invalid_argument("generator config: empty color palette");
  if (cfg.max_objects < 1)
    throw std::invalid_argument("generator config: max_objects must be >= 1");
  if (cfg.min_scale <= 0 || cfg.max_scale < cfg.min_scale)
    throw std::invalid_argument("generator config: bad scale range");
}

inline bool pose_inside_room(const PoseSpec& p, double extent) {
  return std::fabs(p.position.x) < extent && std::fabs(p.position.y) < extent &&
         std::fabs(p.position.z) < extent;
}

inline void validate_pose(const PoseSpec& p, const SceneSpec& scene) {
  if (p.pitch < -M_PI / 2 || p.pitch > M_PI / 2)
    throw std::invalid_argument("pose: pitch out of range");
  if (p.yaw < -M_PI || p.yaw >= M_PI)
    throw std::invalid_argument("pose: yaw not normalised");
  if (!pose_inside_room(p, scene.room_half_extent))
    throw std::invalid_argument("pose: position outside room");
}

inline bool object_fits_room(const ObjectSpec& o, double extent, double margin) {
  const double clearance = extent - margin - o.scale;
  return std::fabs(o.center.x) <= clearance &&
         std::fabs(o.center.y) <= clearance &&
         std::fabs(o.center.z) <= clearance;
}

inline void validate_scene(const SceneSpec& s, const GeneratorConfig& cfg) {
  if (s.objects.empty() ||
      static_cast<int>(s.objects.size()) > cfg.max_objects)
    throw std::invalid_argument("scene: object count out of range");
  for (const auto& o : s.objects) {
    if (o.scale < cfg.min_scale || o.scale > cfg.max_scale)
      throw std::invalid_argument("scene: object scale out of range");
    if (!object_fits_room(o, s.room_half_extent, 0.0))
      throw std::invalid_argument("scene: object intersects a wall");
  }
  const double e = s.room_half_extent;
  if (std::fabs(s.light_position.x) >= e || std::fabs(s.light_position.y) >= e ||
      std::fabs(s.light_position.z) >= e)
    throw std::invalid_argument("scene: light outside room");
}

inline Rgb pick_color(Rng& rng, const std::vector<Rgb>& palette) {
  return palette[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(palette.size()) - 1))];
}

inline SceneSpec sample_scene(std::int64_t rng_seed,
                              const GeneratorConfig& cfg) {
  validate_generator_config(cfg);
  Rng rng = Rng(static_cast<std::uint64_t>(rng_seed)).derive("scene");
  SceneSpec s;
  s.seed = rng_seed;
  s.room_half_extent = cfg.room_half_extent;
  s.wall_color = pick_color(rng, cfg.palette);
  s.floor_color = pick_color(rng, cfg.palette);
  const int count = static_cast<int>(rng.uniform_int(1, cfg.max_objects));
  for (int i = 0; i < count; ++i) {
    ObjectSpec o;
    o.shape = rng.uniform() < 0.5 ? Shape::kSphere : Shape::kBox;
    o.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
    o.color = pick_color(rng, cfg.palette);
    bool placed = false;
    for (int attempt = 0; attempt < cfg.placement_retries; ++attempt) {
      const double clearance = cfg.room_half_extent - cfg.wall_margin - o.scale;
      if (clearance <= 0) {
        rng.uniform();  // keep the stream moving between retries
        continue;
      }
      o.center = {rng.uniform(-clearance, clearance),
                  rng.uniform(-clearance, clearance),
                  rng.uniform(-clearance, clearance)};
      bool overlaps = false;
      for (const auto& prev : s.objects)
        if ((prev.center - o.center).norm() < prev.scale + o.scale) {
          overlaps = true;
          break;
        }
      if (!overlaps) {
        placed = true;
        break;
      }
    }
    if (!placed)
      throw PlacementError("scene placement failed after " +
                           std::to_string(cfg.placement_retries) +
                           " retries (object " + std::to_string(i) + ")");
    s.objects.push_back(o);
  }
  const double e = cfg.room_half_extent;
  s.light_position = {rng.uniform(-0.6 * e, 0.6 * e),
                      rng.uniform(0.3 * e, 0.85 * e),
                      rng.uniform(-0.6 * e, 0.6 * e)};
  return s;
}

inline PoseSpec sample_pose(std::int64_t rng_seed, const SceneSpec& scene,
                            CameraMode mode,
                            const GeneratorConfig& cfg = {}) {
  Rng rng = Rng(static_cast<std::uint64_t>(rng_seed)).derive("pose");
  PoseSpec p;
  if (mode == CameraMode::kRing) {
    const double radius = cfg.ring_radius_frac * scene.room_half_extent;
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    p.position = {radius * std::sin(angle), cfg.ring_height,
                  radius * std::cos(angle)};
    const Vec3 to_center = p.position * -1.0;
    p.yaw = wrap_angle(std::atan2(to_center.x, to_center.z));
    p.pitch = cfg.ring_pitch;
  } else {
    const double lim =
        scene.room_half_extent - cfg.free_position_margin;
    p.position = {rng.uniform(-lim, lim), rng.uniform(-0.5 * lim, 0.5 * lim),
                  rng.uniform(-lim, lim)};
    p.yaw = wrap_angle(rng.uniform(-M_PI, M_PI));
    p.pitch = rng.uniform(-cfg.free_pitch_range, cfg.free_pitch_range);
  }
  validate_pose(p, scene);
  return p;
}

// Camera basis from yaw/pitch; yaw = 0 looks along +z.
struct CameraBasis {
  Vec3 forward, right, up;
};

inline CameraBasis camera_basis(const PoseSpec& p) {
  const double cy = std::cos(p.yaw), sy = std::sin(p.yaw);
  const double cp = std::cos(p.pitch), sp = std::sin(p.pitch);
  CameraBasis b;
  b.forward = {sy * cp, sp, cy * cp};
  b.right = {cy, 0, -sy};
  b.up = b.right.cross(b.forward);
  return b;
}

namespace detail {

struct Hit {
  double t = 1e300;
  Vec3 normal;
  Rgb albedo;
};

inline Hit trace_room(const SceneSpec& s, const Vec3& origin, const Vec3& dir) {
  Hit best;
  const double e = s.room_half_extent;

  // Walls seen from inside: nearest positive exit through each axis plane.
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  for (int axis = 0; axis < 3; ++axis) {
    if (std::fabs(d[axis]) < 1e-15) continue;
    const double plane = d[axis] > 0 ? e : -e;
    const double t = (plane - o[axis]) / d[axis];
    if (t <= 1e-9 || t >= best.t) continue;
    const Vec3 p = origin + dir * t;
    const double lim = e + 1e-9;
    if (std::fabs(p.x) > lim || std::fabs(p.y) > lim || std::fabs(p.z) > lim)
      continue;
    best.t = t;
    best.normal = {0, 0, 0};
    if (axis == 0) best.normal.x = d[0] > 0 ? -1 : 1;
    if (axis == 1) best.normal.y = d[1] > 0 ? -1 : 1;
    if (axis == 2) best.normal.z = d[2] > 0 ? -1 : 1;
    const bool is_floor = axis == 1 && d[1] < 0;
    best.albedo = is_floor ? s.floor_color : s.wall_color;
  }

  for (const auto& obj : s.objects) {
    if (obj.shape == Shape::kSphere) {
      if (auto t = ray_sphere(origin, dir, obj.center, obj.scale)) {
        if (*t < best.t) {
          best.t = *t;
          const Vec3 p = origin + dir * (*t);
          best.normal = (p - obj.center).normalized();
          best.albedo = obj.color;
        }
      }
    } else {
      const Vec3 half = {obj.scale, obj.scale, obj.scale};
      if (auto t = ray_box(origin, dir, obj.center - half, obj.center + half)) {
        if (*t < best.t) {
          best.t = *t;
          const Vec3 p = origin + dir * (*t);
          best.normal = box_normal(p, obj.center, obj.scale);
          best.albedo = obj.color;
        }
      }
    }
  }
  return best;
}

}  // namespace detail

// Flat-shaded nearest-hit raycast: single point light, Lambertian, no
// shadows or reflections. Total over valid inputs.
inline Frame render_view(const SceneSpec& scene, const PoseSpec& pose,
                         int image_size, const RenderOptions& opts = {}) {
  validate_pose(pose, scene);
  Frame img({image_size, image_size, 3});
  const CameraBasis cam = camera_basis(pose);
  const double tan_half = std::tan(opts.fov_y_deg * M_PI / 180.0 / 2.0);
  for (int iy = 0; iy < image_size; ++iy) {
    const double v = 1.0 - 2.0 * (iy + 0.5) / image_size;
    for (int ix = 0; ix < image_size; ++ix) {
      const double u = 2.0 * (ix + 0.5) / image_size - 1.0;
      const Vec3 dir = (cam.forward + cam.right * (u * tan_half) +
                        cam.up * (v * tan_half))
                           .normalized();
      const detail::Hit hit = detail::trace_room(scene, pose.position, dir);
      double shade = 1.0;
      if (opts.light_enabled) {
        const Vec3 p = pose.position + dir * hit.t;
        const Vec3 l = (scene.light_position - p).normalized();
        const double lambert = std::max(0.0, hit.normal.dot(l));
        shade = std::min(1.0, opts.ambient + (1.0 - opts.ambient) * lambert);
      }
      for (int c = 0; c < 3; ++c)
        img.at(iy, ix, c) =
            static_cast<float>(std::min(1.0, std::max(0.0, hit.albedo[c] * shade)));
    }
  }
  return img;
}

inline Episode render_episode(const SceneSpec& scene,
                              const std::vector<PoseSpec>& poses,
                              int image_size, const RenderOptions& opts = {}) {
  Episode ep;
  ep.scene = scene;
  ep.poses = poses;
  ep.frames.reserve(poses.size());
  for (const auto& p : poses)
    ep.frames.push_back(render_view(scene, p, image_size, opts));
  return ep;
}

}  // namespace tgqn::scene
