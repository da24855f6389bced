#pragma once

#include <vector>

#include "tgqn/model/attention.hpp"
#include "tgqn/model/decoder.hpp"
#include "tgqn/model/encoder.hpp"
#include "tgqn/model/losses.hpp"
#include "tgqn/pipeline/config.hpp"
#include "tgqn/pipeline/ordering.hpp"

namespace tgqn::pipeline {

inline model::EncoderConfig encoder_config(const RunConfig& c) {
  model::EncoderConfig e;
  e.image_size = c.image_size;
  e.d = c.d;
  e.base = c.enc_base;
  return e;
}

inline model::AttentionConfig attention_config(const RunConfig& c) {
  model::AttentionConfig a;
  a.d = c.d;
  a.layers = c.attn_layers;
  a.heads = c.attn_heads;
  a.ff_mult = c.attn_ff_mult;
  return a;
}

inline model::DecoderConfig decoder_config(const RunConfig& c) {
  model::DecoderConfig d;
  d.m_cores = c.m_cores;
  d.image_size = c.image_size;
  d.core_channels = c.core_channels;
  d.canvas_channels = c.canvas_channels;
  d.z_channels = c.z_channels;
  d.d = c.d;
  d.target_embed = c.target_embed;
  d.canvas_embed = c.canvas_embed;
  d.core_kernel = c.core_kernel;
  d.head_kernel = c.head_kernel;
  return d;
}

// Encoder and decoder always; the transformer stack only for the attention
// variant.
template <typename T>
ParamStore<T> init_params(const RunConfig& c, Rng rng) {
  validate_config(c);
  ParamStore<T> ps;
  Rng enc_rng = rng.derive("enc");
  init_encoder_params(ps, encoder_config(c), enc_rng);
  if (c.variant == Variant::kTgqn) {
    Rng attn_rng = rng.derive("attn");
    init_attention_params(ps, attention_config(c), attn_rng);
  }
  Rng dec_rng = rng.derive("dec");
  init_decoder_params(ps, decoder_config(c), dec_rng);
  return ps;
}

// Tensors for a batch of ordered contexts. Views fold into the leading axis
// of the observation block; step queries and targets stay per-step.
template <typename T>
struct ContextBatch {
  int batch = 0;
  int n_views = 0;
  Tensor<T> obs_images;                  // (B*N, 3, H, W)
  Tensor<T> obs_poses;                   // (B*N, 7)
  std::vector<Tensor<T>> step_queries;   // N x (B, 7)
  std::vector<Tensor<T>> step_targets;   // N x (B, 3, H, W)
};

template <typename T>
ContextBatch<T> assemble_batch(const std::vector<OrderedContext>& contexts,
                               int image_size) {
  if (contexts.empty())
    throw std::invalid_argument("assemble_batch: empty context list");
  const int b = static_cast<int>(contexts.size());
  const int n = static_cast<int>(contexts[0].observations.size());
  ContextBatch<T> out;
  out.batch = b;
  out.n_views = n;
  out.obs_images = Tensor<T>({b * n, 3, image_size, image_size});
  out.obs_poses = Tensor<T>({b * n, model::kPoseDim});
  for (int s = 0; s < n; ++s) {
    out.step_queries.emplace_back(std::vector<int>{b, model::kPoseDim});
    out.step_targets.emplace_back(
        std::vector<int>{b, 3, image_size, image_size});
  }
  const std::size_t img_elems = static_cast<std::size_t>(3) * image_size * image_size;
  for (int bb = 0; bb < b; ++bb) {
    const OrderedContext& ctx = contexts[bb];
    if (static_cast<int>(ctx.observations.size()) != n)
      throw std::invalid_argument("assemble_batch: ragged view counts");
    for (int v = 0; v < n; ++v) {
      const auto chw = model::frame_to_chw<T>(ctx.observations[v].frame);
      std::copy(chw.data(), chw.data() + img_elems,
                out.obs_images.data() + (static_cast<std::size_t>(bb) * n + v) * img_elems);
      const auto pv = model::pose_to_vector<T>(ctx.observations[v].pose);
      std::copy(pv.data(), pv.data() + model::kPoseDim,
                out.obs_poses.data() + (static_cast<std::size_t>(bb) * n + v) * model::kPoseDim);
    }
    for (int s = 0; s < n; ++s) {
      const auto qv = model::pose_to_vector<T>(ctx.step_query_poses[s]);
      std::copy(qv.data(), qv.data() + model::kPoseDim,
                out.step_queries[s].data() + static_cast<std::size_t>(bb) * model::kPoseDim);
      const auto tv = model::frame_to_chw<T>(ctx.step_targets[s]);
      std::copy(tv.data(), tv.data() + img_elems,
                out.step_targets[s].data() + static_cast<std::size_t>(bb) * img_elems);
    }
  }
  return out;
}

template <typename T>
struct ForwardResult {
  std::vector<model::StepOutputVars<T>> steps;
  model::AttendedVars<T> attention;  // populated for the attention variant
};

namespace detail {

template <typename T>
Var<T> encode_tokens(Graph<T>& g, const ParamVars<T>& pv,
                     const ContextBatch<T>& batch) {
  auto reps = model::encode_views(g, pv, g.constant(batch.obs_images),
                                  g.constant(batch.obs_poses));
  const int d = reps->value.dim(1);
  return reshape(g, reps, {batch.batch, batch.n_views, d});
}

template <typename T>
std::vector<Var<T>> step_query_vars(Graph<T>& g, const ContextBatch<T>& batch) {
  std::vector<Var<T>> out;
  for (const auto& q : batch.step_queries) out.push_back(g.constant(q));
  return out;
}

template <typename T>
std::vector<Var<T>> step_target_vars(Graph<T>& g, const ContextBatch<T>& batch,
                                     model::RunMode mode) {
  std::vector<Var<T>> out;
  if (mode != model::RunMode::kTraining) return out;
  for (const auto& t : batch.step_targets) out.push_back(g.constant(t));
  return out;
}

}  // namespace detail

// Encode each observation, attend across views (per-config mask), then run
// the sequential decoder with r*_n conditioning step n.
template <typename T>
ForwardResult<T> forward_tgqn(Graph<T>& g, const ParamVars<T>& pv,
                              const ContextBatch<T>& batch, bool masked,
                              model::RunMode mode, const RunConfig& cfg,
                              model::NoiseSource<T>& noise) {
  ForwardResult<T> out;
  auto tokens = detail::encode_tokens(g, pv, batch);
  out.attention =
      model::multi_view_attention(g, tokens, masked, pv, attention_config(cfg));
  std::vector<Var<T>> conditioning;
  for (int n = 0; n < batch.n_views; ++n)
    conditioning.push_back(slice_token(g, out.attention.tokens, n));
  out.steps = model::decode_sequence(
      g, conditioning, detail::step_query_vars(g, batch),
      detail::step_target_vars(g, batch, mode), mode, pv, decoder_config(cfg),
      noise);
  return out;
}

// Ablation: the summed representation R conditions every rendering step.
template <typename T>
ForwardResult<T> forward_seqgqn(Graph<T>& g, const ParamVars<T>& pv,
                                const ContextBatch<T>& batch,
                                model::RunMode mode, const RunConfig& cfg,
                                model::NoiseSource<T>& noise) {
  ForwardResult<T> out;
  auto tokens = detail::encode_tokens(g, pv, batch);
  auto aggregate = sum_tokens(g, tokens);
  std::vector<Var<T>> conditioning(static_cast<std::size_t>(batch.n_views),
                                   aggregate);
  out.steps = model::decode_sequence(
      g, conditioning, detail::step_query_vars(g, batch),
      detail::step_target_vars(g, batch, mode), mode, pv, decoder_config(cfg),
      noise);
  return out;
}

// Baseline: aggregate R, one rendering step at the query pose.
template <typename T>
ForwardResult<T> forward_gqn(Graph<T>& g, const ParamVars<T>& pv,
                             const ContextBatch<T>& batch,
                             model::RunMode mode, const RunConfig& cfg,
                             model::NoiseSource<T>& noise) {
  ForwardResult<T> out;
  auto tokens = detail::encode_tokens(g, pv, batch);
  auto aggregate = sum_tokens(g, tokens);
  std::vector<Var<T>> conditioning{aggregate};
  std::vector<Var<T>> queries{g.constant(batch.step_queries.back())};
  std::vector<Var<T>> targets;
  if (mode == model::RunMode::kTraining)
    targets.push_back(g.constant(batch.step_targets.back()));
  out.steps = model::decode_sequence(g, conditioning, queries, targets, mode,
                                     pv, decoder_config(cfg), noise);
  return out;
}

template <typename T>
ForwardResult<T> forward_variant(Graph<T>& g, const ParamVars<T>& pv,
                                 const ContextBatch<T>& batch,
                                 model::RunMode mode, const RunConfig& cfg,
                                 model::NoiseSource<T>& noise, bool masked) {
  switch (cfg.variant) {
    case Variant::kTgqn:
      return forward_tgqn(g, pv, batch, masked, mode, cfg, noise);
    case Variant::kSeqGqn:
      return forward_seqgqn(g, pv, batch, mode, cfg, noise);
    case Variant::kGqn:
      return forward_gqn(g, pv, batch, mode, cfg, noise);
  }
  throw std::logic_error("forward_variant: unreachable");
}

// Variant loss at the configured beta (the baseline objective pins beta = 1).
template <typename T>
model::LossVars<T> variant_loss(Graph<T>& g, const RunConfig& cfg,
                                const ForwardResult<T>& fwd,
                                const ContextBatch<T>& batch, T sigma) {
  std::vector<Var<T>> targets;
  if (cfg.variant == Variant::kGqn) {
    targets.push_back(g.constant(batch.step_targets.back()));
    return model::gqn_loss(g, fwd.steps[0], targets[0], sigma);
  }
  for (const auto& t : batch.step_targets) targets.push_back(g.constant(t));
  return model::tgqn_loss(g, fwd.steps, targets, static_cast<T>(cfg.beta),
                          sigma);
}

}  // namespace tgqn::pipeline
