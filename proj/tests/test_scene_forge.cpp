#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <optional>

#include "tgqn/scene/scene_forge.hpp"
#include "tgqn/scene/shard_io.hpp"

using namespace tgqn::scene;
using tgqn::Rng;

namespace {

bool scenes_equal(const SceneSpec& a, const SceneSpec& b) {
  if (a.room_half_extent != b.room_half_extent) return false;
  if (a.wall_color != b.wall_color || a.floor_color != b.floor_color)
    return false;
  if (a.objects.size() != b.objects.size()) return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    const auto& x = a.objects[i];
    const auto& y = b.objects[i];
    if (x.shape != y.shape || x.scale != y.scale || x.color != y.color)
      return false;
    if (x.center.x != y.center.x || x.center.y != y.center.y ||
        x.center.z != y.center.z)
      return false;
  }
  return true;
}

TEST(SampleScene, DeterministicForSeed) {
  GeneratorConfig cfg;
  const SceneSpec a = sample_scene(7, cfg);
  const SceneSpec b = sample_scene(7, cfg);
  EXPECT_TRUE(scenes_equal(a, b));
  const SceneSpec c = sample_scene(8, cfg);
  EXPECT_FALSE(scenes_equal(a, c));
}

TEST(SampleScene, MaxObjectsOneForcesSingleObject) {
  GeneratorConfig cfg;
  cfg.max_objects = 1;
  for (int seed = 0; seed < 20; ++seed)
    EXPECT_EQ(sample_scene(seed, cfg).objects.size(), 1u);
}

TEST(SampleScene, InvariantSweepThousandScenes) {
  GeneratorConfig cfg;
  for (int seed = 0; seed < 1000; ++seed) {
    const SceneSpec s = sample_scene(seed, cfg);
    EXPECT_NO_THROW(validate_scene(s, cfg)) << "seed " << seed;
    EXPECT_GE(s.objects.size(), 1u);
    EXPECT_LE(static_cast<int>(s.objects.size()), cfg.max_objects);
  }
}

TEST(SampleScene, PlacementFailureAfterBoundedRetries) {
  GeneratorConfig cfg;
  cfg.min_scale = cfg.room_half_extent;  // cannot fit anywhere
  cfg.max_scale = cfg.room_half_extent * 1.5;
  EXPECT_THROW(sample_scene(1, cfg), PlacementError);
}

TEST(SamplePose, RingGeometry) {
  GeneratorConfig cfg;
  const SceneSpec scene = sample_scene(3, cfg);
  const double radius = cfg.ring_radius_frac * scene.room_half_extent;
  for (int seed = 0; seed < 50; ++seed) {
    const PoseSpec p = sample_pose(seed, scene, CameraMode::kRing, cfg);
    const double r = std::hypot(p.position.x, p.position.z);
    EXPECT_NEAR(r, radius, 1e-6);
    const double expected_yaw =
        std::atan2(-p.position.x, -p.position.z);
    EXPECT_NEAR(p.yaw, wrap_angle(expected_yaw), 1e-9);
    EXPECT_DOUBLE_EQ(p.pitch, cfg.ring_pitch);
  }
}

TEST(SamplePose, FreeModeStaysInsideRoom) {
  GeneratorConfig cfg;
  const SceneSpec scene = sample_scene(11, cfg);
  for (int seed = 0; seed < 1000; ++seed) {
    const PoseSpec p = sample_pose(seed, scene, CameraMode::kFree, cfg);
    EXPECT_TRUE(pose_inside_room(p, scene.room_half_extent));
    EXPECT_GE(p.pitch, -cfg.free_pitch_range);
    EXPECT_LE(p.pitch, cfg.free_pitch_range);
    EXPECT_GE(p.yaw, -M_PI);
    EXPECT_LT(p.yaw, M_PI);
  }
}

TEST(SamplePose, DeterministicForSeed) {
  GeneratorConfig cfg;
  const SceneSpec scene = sample_scene(5, cfg);
  const PoseSpec a = sample_pose(17, scene, CameraMode::kFree, cfg);
  const PoseSpec b = sample_pose(17, scene, CameraMode::kFree, cfg);
  EXPECT_DOUBLE_EQ(a.position.x, b.position.x);
  EXPECT_DOUBLE_EQ(a.yaw, b.yaw);
  EXPECT_DOUBLE_EQ(a.pitch, b.pitch);
}

// Closed-form quadratic written independently of the geometry header.
std::optional<double> oracle_sphere(const Vec3& o, const Vec3& d,
                                    const Vec3& c, double r) {
  const double A = d.dot(d);
  const double B = 2.0 * (o - c).dot(d);
  const double C = (o - c).dot(o - c) - r * r;
  const double disc = B * B - 4 * A * C;
  if (disc < 0) return std::nullopt;
  const double t1 = (-B - std::sqrt(disc)) / (2 * A);
  const double t2 = (-B + std::sqrt(disc)) / (2 * A);
  if (t1 > 1e-9) return t1;
  if (t2 > 1e-9) return t2;
  return std::nullopt;
}

std::optional<double> oracle_box(const Vec3& o, const Vec3& d, const Vec3& lo,
                                 const Vec3& hi) {
  double enter = -1e300, exit = 1e300;
  const double ov[3] = {o.x, o.y, o.z}, dv[3] = {d.x, d.y, d.z};
  const double lv[3] = {lo.x, lo.y, lo.z}, hv[3] = {hi.x, hi.y, hi.z};
  for (int i = 0; i < 3; ++i) {
    if (dv[i] == 0.0) {
      if (ov[i] < lv[i] || ov[i] > hv[i]) return std::nullopt;
      continue;
    }
    const double a = (lv[i] - ov[i]) / dv[i];
    const double b = (hv[i] - ov[i]) / dv[i];
    enter = std::max(enter, std::min(a, b));
    exit = std::min(exit, std::max(a, b));
  }
  if (enter > exit || exit <= 1e-9) return std::nullopt;
  return enter > 1e-9 ? enter : exit;
}

TEST(Raycaster, IntersectionsMatchClosedFormOracle) {
  Rng rng(99);
  int sphere_hits = 0, box_hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 o{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const Vec3 c{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    // Aim at the object's neighbourhood so the sweep mixes hits and misses.
    Vec3 d = (c - o) + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.8;
    d = d.normalized();
    const double r = rng.uniform(0.2, 1.5);

    const auto got = ray_sphere(o, d, c, r);
    const auto want = oracle_sphere(o, d, c, r);
    ASSERT_EQ(got.has_value(), want.has_value()) << "ray " << i;
    if (got) {
      EXPECT_NEAR(*got, *want, 1e-9);
      ++sphere_hits;
    }

    const Vec3 half{rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0),
                    rng.uniform(0.2, 1.0)};
    const auto gotb = ray_box(o, d, c - half, c + half);
    const auto wantb = oracle_box(o, d, c - half, c + half);
    ASSERT_EQ(gotb.has_value(), wantb.has_value()) << "ray " << i;
    if (gotb) {
      EXPECT_NEAR(*gotb, *wantb, 1e-9);
      ++box_hits;
    }
  }
  // Make sure the sweep actually exercised both branches.
  EXPECT_GT(sphere_hits, 100);
  EXPECT_GT(box_hits, 100);
}

TEST(Raycaster, WallHeadOnMatchesWallColor) {
  SceneSpec s;
  s.room_half_extent = 2.0;
  s.wall_color = {0.2, 0.5, 0.8};
  s.floor_color = {0.1, 0.1, 0.1};
  s.light_position = {0, 1, 0};
  PoseSpec p;
  p.position = {0, 0, 0};
  p.yaw = 0;
  p.pitch = 0;

  RenderOptions no_light;
  no_light.light_enabled = false;
  const Frame f = render_view(s, p, 16, no_light);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      EXPECT_FLOAT_EQ(f.at(y, x, 0), 0.2f);
      EXPECT_FLOAT_EQ(f.at(y, x, 1), 0.5f);
      EXPECT_FLOAT_EQ(f.at(y, x, 2), 0.8f);
    }

  RenderOptions lit;  // shading scales the hue but keeps its direction
  const Frame g = render_view(s, p, 16, lit);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const double shade = g.at(y, x, 0) / 0.2;
      EXPECT_NEAR(g.at(y, x, 1), 0.5 * shade, 1e-5);
      EXPECT_NEAR(g.at(y, x, 2), 0.8 * shade, 1e-5);
      EXPECT_GT(shade, 0.0);
      EXPECT_LE(shade, 1.0 + 1e-6);
    }
}

TEST(Raycaster, RingSymmetryAroundCenteredSphere) {
  SceneSpec s;
  s.room_half_extent = 2.0;
  s.wall_color = {0.6, 0.6, 0.6};
  s.floor_color = {0.6, 0.6, 0.6};  // uniform background
  s.light_position = {0, 1.2, 0};   // on the vertical center axis
  ObjectSpec sphere;
  sphere.shape = Shape::kSphere;
  sphere.center = {0, 0, 0};
  sphere.scale = 0.6;
  sphere.color = {0.9, 0.2, 0.2};
  s.objects.push_back(sphere);

  SceneSpec background = s;
  background.objects.clear();

  const double radius = 1.4;
  auto ring_pose = [&](double angle) {
    PoseSpec p;
    p.position = {radius * std::sin(angle), 0.0, radius * std::cos(angle)};
    p.yaw = wrap_angle(std::atan2(-p.position.x, -p.position.z));
    p.pitch = 0;
    return p;
  };

  // With the light term disabled the whole frame is rotation invariant.
  RenderOptions no_light;
  no_light.light_enabled = false;
  const Frame flat_ref = render_view(s, ring_pose(0.0), 24, no_light);
  for (int k = 1; k < 16; ++k) {
    const double angle = 2.0 * M_PI * k / 16.0;
    const Frame f = render_view(s, ring_pose(angle), 24, no_light);
    for (std::size_t i = 0; i < f.size(); ++i)
      ASSERT_NEAR(f[i], flat_ref[i], 1e-6) << "angle index " << k;
  }

  // With the shared axis light, every sphere pixel is rotation invariant;
  // the square walls themselves are only symmetric under quarter turns.
  const Frame lit_ref = render_view(s, ring_pose(0.0), 24);
  const Frame bg_ref = render_view(background, ring_pose(0.0), 24);
  int sphere_pixels = 0;
  for (int k = 1; k < 16; ++k) {
    const double angle = 2.0 * M_PI * k / 16.0;
    const Frame f = render_view(s, ring_pose(angle), 24);
    const Frame bg = render_view(background, ring_pose(angle), 24);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        const bool on_sphere_ref = lit_ref.at(y, x, 0) != bg_ref.at(y, x, 0);
        const bool on_sphere = f.at(y, x, 0) != bg.at(y, x, 0);
        if (on_sphere_ref && on_sphere) {
          ++sphere_pixels;
          for (int ch = 0; ch < 3; ++ch)
            ASSERT_NEAR(f.at(y, x, ch), lit_ref.at(y, x, ch), 1e-6)
                << "angle index " << k;
        }
      }
  }
  EXPECT_GT(sphere_pixels, 15 * 20);
}

TEST(Raycaster, BiggerSphereCoversMorePixels) {
  SceneSpec base;
  base.room_half_extent = 2.0;
  base.wall_color = {0.5, 0.5, 0.5};
  base.floor_color = {0.25, 0.25, 0.25};
  base.light_position = {0.5, 1.0, 0.5};

  PoseSpec p;
  p.position = {0, 0, -1.4};
  p.yaw = 0;
  p.pitch = 0;

  auto object_pixels = [&](double scale) {
    SceneSpec with = base;
    ObjectSpec o;
    o.shape = Shape::kSphere;
    o.center = {0, 0, 0.5};
    o.scale = scale;
    o.color = {0.9, 0.1, 0.1};
    with.objects.push_back(o);
    const Frame a = render_view(base, p, 32);
    const Frame b = render_view(with, p, 32);
    int diff = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (a.at(y, x, 0) != b.at(y, x, 0) || a.at(y, x, 1) != b.at(y, x, 1) ||
            a.at(y, x, 2) != b.at(y, x, 2))
          ++diff;
    return diff;
  };

  const int small = object_pixels(0.3);
  const int large = object_pixels(0.6);
  EXPECT_GT(small, 0);
  EXPECT_GT(large, small);
}

TEST(Raycaster, FramesAlwaysInUnitRange) {
  GeneratorConfig cfg;
  for (int seed = 0; seed < 10; ++seed) {
    const SceneSpec s = sample_scene(seed, cfg);
    const PoseSpec p = sample_pose(seed, s, CameraMode::kFree, cfg);
    const Frame f = render_view(s, p, 16);
    for (std::size_t i = 0; i < f.size(); ++i) {
      ASSERT_GE(f[i], 0.0f);
      ASSERT_LE(f[i], 1.0f);
    }
  }
}

TEST(ShardIO, CountContractAndRoundTrip) {
  const Shard shard =
      generate_dataset(2, 10, CameraMode::kRing, 42, 16);
  EXPECT_EQ(shard.scenes.size(), 2u);
  for (const auto& s : shard.scenes) {
    EXPECT_EQ(s.poses.size(), 10u);
    EXPECT_EQ(s.pixels.size(), 10u * 16 * 16 * 3);
  }

  const std::string path = testing::TempDir() + "/roundtrip.tgqn";
  write_shard(shard, path);
  const Shard back = read_shard(path);
  EXPECT_EQ(encode_shard(back), encode_shard(shard));

  // Loader round-trip is lossless at the byte level.
  const std::string path2 = testing::TempDir() + "/roundtrip2.tgqn";
  write_shard(back, path2);
  const Shard back2 = read_shard(path2);
  EXPECT_EQ(encode_shard(back2), encode_shard(back));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST(ShardIO, SameSeedGivesIdenticalBytes) {
  const Shard a = generate_dataset(3, 4, CameraMode::kFree, 7, 16);
  const Shard b = generate_dataset(3, 4, CameraMode::kFree, 7, 16);
  EXPECT_EQ(encode_shard(a), encode_shard(b));
  const Shard c = generate_dataset(3, 4, CameraMode::kFree, 8, 16);
  EXPECT_NE(encode_shard(a), encode_shard(c));
}

TEST(ShardIO, TruncatedFileIsRejectedWithPathContext) {
  const Shard shard = generate_dataset(1, 3, CameraMode::kRing, 1, 16);
  const std::string path = testing::TempDir() + "/trunc.tgqn";
  const std::string bytes = encode_shard(shard);
  {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  try {
    read_shard(path);
    FAIL() << "expected truncation error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(ShardIO, QuantizationIsStableUnderReload) {
  // round(255 * (k/255)) == k for all byte values.
  for (int k = 0; k < 256; ++k) {
    const float v = static_cast<float>(k) / 255.0f;
    EXPECT_EQ(quantize_pixel(v), k);
  }
}

}  // namespace
