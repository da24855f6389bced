#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "tgqn/model/pose_vector.hpp"
#include "tgqn/scene/scene_forge.hpp"

namespace tgqn::pipeline {

struct Observation {
  scene::Frame frame;
  scene::PoseSpec pose;
};

// Context for one sequential example: observations sorted by Euclidean
// distance between their positions and the query position (stable on ties),
// with the per-step targets (I_2 .. I_N, I_q) and queries (v_2 .. v_N, v_q).
struct OrderedContext {
  std::vector<Observation> observations;
  std::vector<scene::PoseSpec> step_query_poses;
  std::vector<scene::Frame> step_targets;
  scene::PoseSpec query_pose;
  scene::Frame query_frame;
};

inline double position_distance(const scene::PoseSpec& a,
                                const scene::PoseSpec& b) {
  return (a.position - b.position).norm();
}

inline OrderedContext order_observations(std::vector<Observation> observations,
                                         const scene::PoseSpec& query_pose,
                                         const scene::Frame& query_frame,
                                         bool ordered = true) {
  if (observations.empty())
    throw std::invalid_argument("order_observations: empty observation list");
  if (ordered) {
    std::vector<int> idx(observations.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return position_distance(observations[a].pose, query_pose) <
             position_distance(observations[b].pose, query_pose);
    });
    std::vector<Observation> sorted;
    sorted.reserve(observations.size());
    for (int i : idx) sorted.push_back(std::move(observations[i]));
    observations = std::move(sorted);
  }

  OrderedContext ctx;
  ctx.query_pose = query_pose;
  ctx.query_frame = query_frame;
  for (std::size_t n = 1; n < observations.size(); ++n) {
    ctx.step_query_poses.push_back(observations[n].pose);
    ctx.step_targets.push_back(observations[n].frame);
  }
  ctx.step_query_poses.push_back(query_pose);
  ctx.step_targets.push_back(query_frame);
  ctx.observations = std::move(observations);
  return ctx;
}

}  // namespace tgqn::pipeline
