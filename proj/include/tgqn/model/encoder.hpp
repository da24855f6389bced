#pragma once

#include <string>
#include <vector>

#include "tgqn/core/ops.hpp"
#include "tgqn/core/param_store.hpp"
#include "tgqn/model/pose_vector.hpp"

namespace tgqn::model {

// Per-view tower encoder: six convolution stages, stride-2 at stages 1 and 3,
// 1x1-projected skip connections at stages 2 and 4, the pose vector tiled in
// after the first downsampling, and a global average pool down to a d-vector.
// Each view becomes exactly one attention token.
struct EncoderConfig {
  int image_size = 32;
  int d = 256;     // representation width
  int base = 32;   // channels of the first stage
};

template <typename T>
void init_encoder_params(ParamStore<T>& ps, const EncoderConfig& cfg,
                         Rng& rng) {
  const int b = cfg.base, b2 = 2 * cfg.base;
  ps.add_weight("enc.s1.w", {b, 3, 5, 5}, rng);
  ps.add_zeros("enc.s1.b", {b});
  ps.add_weight("enc.s2.w", {b, b + kPoseDim, 3, 3}, rng);
  ps.add_weight("enc.s2.skip.w", {b, b + kPoseDim, 1, 1}, rng);
  ps.add_zeros("enc.s2.b", {b});
  ps.add_weight("enc.s3.w", {b2, b, 5, 5}, rng);
  ps.add_zeros("enc.s3.b", {b2});
  ps.add_weight("enc.s4.w", {b2, b2, 3, 3}, rng);
  ps.add_weight("enc.s4.skip.w", {b2, b2, 1, 1}, rng);
  ps.add_zeros("enc.s4.b", {b2});
  ps.add_weight("enc.s5.w", {b2, b2, 3, 3}, rng);
  ps.add_zeros("enc.s5.b", {b2});
  ps.add_weight("enc.s6.w", {cfg.d, b2, 1, 1}, rng);
  ps.add_zeros("enc.s6.b", {cfg.d});
}

// images: (R, 3, H, W), pose_vecs: (R, 7); R folds batch and view. Returns
// (R, d) representations.
template <typename T>
Var<T> encode_views(Graph<T>& g, const ParamVars<T>& pv, Var<T> images,
                    Var<T> pose_vecs) {
  if (images->value.rank() != 4 || images->value.dim(1) != 3)
    throw std::invalid_argument("encode_views: expected (R,3,H,W) images");
  if (pose_vecs->value.dim(0) != images->value.dim(0))
    throw std::invalid_argument("encode_views: image/pose count mismatch");
  const int h2 = images->value.dim(2) / 2, w2 = images->value.dim(3) / 2;

  auto h1 = relu(g, conv2d(g, images, pv["enc.s1.w"], pv["enc.s1.b"], 2, 2));
  auto pose_map = tile_vec(g, pose_vecs, h2, w2);
  auto cat = concat_ch<T>(g, {h1, pose_map});
  auto s2 = add(g, conv2d(g, cat, pv["enc.s2.w"], pv["enc.s2.b"], 1, 1),
                conv2d(g, cat, pv["enc.s2.skip.w"], nullptr, 1, 0));
  auto h2v = relu(g, s2);
  auto h3 = relu(g, conv2d(g, h2v, pv["enc.s3.w"], pv["enc.s3.b"], 2, 2));
  auto s4 = add(g, conv2d(g, h3, pv["enc.s4.w"], pv["enc.s4.b"], 1, 1),
                conv2d(g, h3, pv["enc.s4.skip.w"], nullptr, 1, 0));
  auto h4 = relu(g, s4);
  auto h5 = relu(g, conv2d(g, h4, pv["enc.s5.w"], pv["enc.s5.b"], 1, 1));
  auto h6 = relu(g, conv2d(g, h5, pv["enc.s6.w"], pv["enc.s6.b"], 1, 0));
  return global_avg_pool(g, h6);
}

// One observation -> one representation, outside any training graph.
template <typename T>
Tensor<T> encode_observation(const scene::Frame& frame,
                             const scene::PoseSpec& pose,
                             const ParamStore<T>& params,
                             const EncoderConfig& cfg) {
  if (frame.dim(0) != cfg.image_size || frame.dim(1) != cfg.image_size)
    throw std::invalid_argument("encode_observation: frame size mismatch");
  Graph<T> g;
  ParamVars<T> pv(g, params, false);
  auto img = g.constant(
      frame_to_chw<T>(frame).reshaped({1, 3, cfg.image_size, cfg.image_size}));
  auto pvec = g.constant(pose_to_vector<T>(pose).reshaped({1, kPoseDim}));
  auto rep = encode_views(g, pv, img, pvec);
  return rep->value.reshaped({cfg.d});
}

// Element-wise sum of representations (GQN / SeqGQN aggregation). Pairwise
// tree reduction in a wide accumulator, so the result is insensitive to the
// input order at the bit level for realistic magnitudes.
template <typename T>
Tensor<T> aggregate_sum(const std::vector<Tensor<T>>& reps) {
  if (reps.empty())
    throw std::invalid_argument("aggregate_sum: empty representation list");
  const std::vector<int> shape = reps[0].shape();
  std::vector<const T*> ptrs;
  for (const auto& r : reps) {
    if (r.shape() != shape)
      throw std::invalid_argument("aggregate_sum: shape mismatch");
    ptrs.push_back(r.data());
  }
  Tensor<T> out(shape);
  std::vector<T> column(reps.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < ptrs.size(); ++k) column[k] = ptrs[k][i];
    out[i] = tgqn::detail::pairwise_wide_sum(column.data(), 1,
                                       static_cast<int>(column.size()));
  }
  return out;
}

}  // namespace tgqn::model
