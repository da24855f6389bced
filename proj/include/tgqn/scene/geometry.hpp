#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

namespace tgqn::scene {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
  }
};

// Nearest positive intersection distance of a ray with a sphere.
inline std::optional<double> ray_sphere(const Vec3& origin, const Vec3& dir,
                                        const Vec3& center, double radius) {
  const Vec3 oc = origin - center;
  const double a = dir.dot(dir);
  const double half_b = oc.dot(dir);
  const double c = oc.dot(oc) - radius * radius;
  const double disc = half_b * half_b - a * c;
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = (-half_b - sq) / a;
  if (t <= 1e-9) t = (-half_b + sq) / a;
  if (t <= 1e-9) return std::nullopt;
  return t;
}

// Slab test against an axis-aligned box; returns the entry distance for rays
// starting outside, or the exit distance for rays starting inside.
inline std::optional<double> ray_box(const Vec3& origin, const Vec3& dir,
                                     const Vec3& bmin, const Vec3& bmax) {
  double tmin = -1e300, tmax = 1e300;
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  const double lo[3] = {bmin.x, bmin.y, bmin.z};
  const double hi[3] = {bmax.x, bmax.y, bmax.z};
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(d[i]) < 1e-15) {
      if (o[i] < lo[i] || o[i] > hi[i]) return std::nullopt;
      continue;
    }
    double t0 = (lo[i] - o[i]) / d[i];
    double t1 = (hi[i] - o[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmax <= 1e-9) return std::nullopt;
  const double t = tmin > 1e-9 ? tmin : tmax;
  return t;
}

// Outward normal of an axis-aligned box at a surface point.
inline Vec3 box_normal(const Vec3& p, const Vec3& center, double half) {
  const Vec3 d = p - center;
  const double ax = std::fabs(d.x), ay = std::fabs(d.y), az = std::fabs(d.z);
  (void)half;
  if (ax >= ay && ax >= az) return {d.x > 0 ? 1.0 : -1.0, 0, 0};
  if (ay >= ax && ay >= az) return {0, d.y > 0 ? 1.0 : -1.0, 0};
  return {0, 0, d.z > 0 ? 1.0 : -1.0};
}

inline double wrap_angle(double a) {
  // Normalise to [-pi, pi).
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

}  // namespace tgqn::scene
