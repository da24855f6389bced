#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tgqn/core/ops.hpp"
#include "tgqn/core/param_store.hpp"

namespace tgqn::model {

struct AttentionConfig {
  int d = 256;
  int layers = 2;
  int heads = 4;
  int ff_mult = 4;
};

// Row n sees views 1..n in masked mode; all views otherwise. Every row keeps
// its own diagonal entry.
template <typename T>
Tensor<T> build_attention_mask(int n_views, bool masked) {
  if (n_views < 1)
    throw std::invalid_argument("build_attention_mask: n_views must be >= 1");
  Tensor<T> m({n_views, n_views});
  for (int i = 0; i < n_views; ++i)
    for (int j = 0; j < n_views; ++j)
      m.at(i, j) = (!masked || j <= i) ? T(1) : T(0);
  return m;
}

template <typename T>
void init_attention_params(ParamStore<T>& ps, const AttentionConfig& cfg,
                           Rng& rng) {
  if (cfg.d % cfg.heads != 0)
    throw std::invalid_argument("attention: d not divisible by heads");
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "attn.l" + std::to_string(l) + ".";
    for (const char* n : {"wq", "wk", "wv", "wo"})
      ps.add_weight(p + n, {cfg.d, cfg.d}, rng);
    for (const char* n : {"bq", "bk", "bv", "bo"})
      ps.add_zeros(p + n, {cfg.d});
    ps.add_weight(p + "ff.w1", {cfg.d, cfg.ff_mult * cfg.d}, rng);
    ps.add_zeros(p + "ff.b1", {cfg.ff_mult * cfg.d});
    ps.add_weight(p + "ff.w2", {cfg.ff_mult * cfg.d, cfg.d}, rng);
    ps.add_zeros(p + "ff.b2", {cfg.d});
    ps.add_ones(p + "ln1.g", {cfg.d});
    ps.add_zeros(p + "ln1.b", {cfg.d});
    ps.add_ones(p + "ln2.g", {cfg.d});
    ps.add_zeros(p + "ln2.b", {cfg.d});
  }
}

template <typename T>
struct AttendedVars {
  Var<T> tokens = nullptr;            // (B, N, d)
  std::vector<Var<T>> layer_scores;   // each (B, heads, N, N)
};

// One transformer-encoder block: masked scaled dot-product attention, output
// projection, residual + layer norm, position-wise feed-forward, residual +
// layer norm. Returns the new tokens and the per-head attention matrix.
template <typename T>
std::pair<Var<T>, Var<T>> attend_layer(Graph<T>& g, Var<T> tokens,
                                       const Tensor<T>& mask,
                                       const ParamVars<T>& pv,
                                       const std::string& prefix,
                                       const AttentionConfig& cfg) {
  const int b = tokens->value.dim(0), nv = tokens->value.dim(1),
            d = tokens->value.dim(2);
  if (mask.dim(0) != nv || mask.dim(1) != nv)
    throw std::invalid_argument("attend_layer: mask/token count mismatch");
  if (d % cfg.heads != 0)
    throw std::invalid_argument("attend_layer: d not divisible by heads");
  const int dh = d / cfg.heads;

  auto flat = reshape(g, tokens, {b * nv, d});
  auto q = reshape(g, linear(g, flat, pv[prefix + "wq"], pv[prefix + "bq"]),
                   {b, nv, d});
  auto k = reshape(g, linear(g, flat, pv[prefix + "wk"], pv[prefix + "bk"]),
                   {b, nv, d});
  auto v = reshape(g, linear(g, flat, pv[prefix + "wv"], pv[prefix + "bv"]),
                   {b, nv, d});
  auto qh = split_heads(g, q, cfg.heads);
  auto kh = split_heads(g, k, cfg.heads);
  auto vh = split_heads(g, v, cfg.heads);
  auto logits =
      attn_scores(g, qh, kh, static_cast<T>(1.0 / std::sqrt(double(dh))));
  auto attn = masked_softmax(g, logits, mask);
  auto mixed = merge_heads(g, attn_mix(g, attn, vh));
  auto proj = linear(g, reshape(g, mixed, {b * nv, d}), pv[prefix + "wo"],
                     pv[prefix + "bo"]);
  auto res1 = add(g, flat, proj);
  auto ln1 =
      layer_norm(g, res1, pv[prefix + "ln1.g"], pv[prefix + "ln1.b"]);
  auto ff = linear(
      g, relu(g, linear(g, ln1, pv[prefix + "ff.w1"], pv[prefix + "ff.b1"])),
      pv[prefix + "ff.w2"], pv[prefix + "ff.b2"]);
  auto res2 = add(g, ln1, ff);
  auto ln2 =
      layer_norm(g, res2, pv[prefix + "ln2.g"], pv[prefix + "ln2.b"]);
  return {reshape(g, ln2, {b, nv, d}), attn};
}

// Stack of transformer-encoder blocks over the N view tokens. No positional
// encoding is added; ordering information enters only through the mask and
// the pose content of each token.
template <typename T>
AttendedVars<T> multi_view_attention(Graph<T>& g, Var<T> tokens, bool masked,
                                     const ParamVars<T>& pv,
                                     const AttentionConfig& cfg) {
  const int nv = tokens->value.dim(1);
  const Tensor<T> mask = build_attention_mask<T>(nv, masked);
  AttendedVars<T> out;
  Var<T> x = tokens;
  for (int l = 0; l < cfg.layers; ++l) {
    auto [next, scores] =
        attend_layer(g, x, mask, pv, "attn.l" + std::to_string(l) + ".", cfg);
    x = next;
    out.layer_scores.push_back(scores);
  }
  out.tokens = x;
  return out;
}

// Final-layer scores averaged over heads: the matrix reported for
// visualisation. scores: (B, H, N, N) values -> (N, N) for sample b.
template <typename T>
Tensor<T> mean_head_scores(const Tensor<T>& scores, int b) {
  const int heads = scores.dim(1), nv = scores.dim(2);
  Tensor<T> out({nv, nv});
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) {
      double acc = 0;
      for (int h = 0; h < heads; ++h) acc += scores.at(b, h, i, j);
      out.at(i, j) = static_cast<T>(acc / heads);
    }
  return out;
}

}  // namespace tgqn::model
