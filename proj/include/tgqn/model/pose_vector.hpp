#pragma once

#include <cmath>

#include "tgqn/core/tensor.hpp"
#include "tgqn/scene/scene_forge.hpp"

namespace tgqn::model {

constexpr int kPoseDim = 7;

// Network-facing pose featurisation:
// (x, y, z, cos yaw, sin yaw, cos pitch, sin pitch).
// Injective over the valid pose range since pitch stays within [-pi/2, pi/2].
template <typename T>
Tensor<T> pose_to_vector(const scene::PoseSpec& pose) {
  Tensor<T> v({kPoseDim});
  v[0] = static_cast<T>(pose.position.x);
  v[1] = static_cast<T>(pose.position.y);
  v[2] = static_cast<T>(pose.position.z);
  v[3] = static_cast<T>(std::cos(pose.yaw));
  v[4] = static_cast<T>(std::sin(pose.yaw));
  v[5] = static_cast<T>(std::cos(pose.pitch));
  v[6] = static_cast<T>(std::sin(pose.pitch));
  return v;
}

// (H, W, 3) frame in [0,1] -> (3, H, W) network layout.
template <typename T>
Tensor<T> frame_to_chw(const scene::Frame& f) {
  const int h = f.dim(0), w = f.dim(1);
  Tensor<T> out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<T>(f.at(y, x, c));
  return out;
}

template <typename T>
scene::Frame chw_to_frame(const Tensor<T>& t) {
  const int h = t.dim(1), w = t.dim(2);
  scene::Frame out({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = static_cast<float>(t.at(c, y, x));
  return out;
}

}  // namespace tgqn::model
