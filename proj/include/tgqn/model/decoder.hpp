#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tgqn/core/ops.hpp"
#include "tgqn/core/param_store.hpp"
#include "tgqn/core/rng.hpp"
#include "tgqn/model/pose_vector.hpp"

namespace tgqn::model {

enum class RunMode { kTraining, kGeneration };

// Sequential rendering decoder: M paired generation/inference convolutional
// LSTM cores refine a canvas over M micro-steps per rendering step. All cell,
// hidden and canvas states thread across rendering steps; one parameter set
// is shared by every step.
struct DecoderConfig {
  int m_cores = 4;
  int image_size = 32;
  int core_channels = 64;    // LSTM state channels
  int canvas_channels = 64;  // canvas feature channels
  int z_channels = 3;        // latent channels per micro-step
  int d = 256;               // conditioning vector width
  int target_embed = 8;      // channels of the downsampled target
  int canvas_embed = 8;      // channels of the downsampled canvas
  int core_kernel = 3;       // gate convolution kernel (odd)
  int head_kernel = 5;       // prior/posterior head kernel (odd)

  int grid() const { return image_size / 4; }
};

inline void validate_decoder_config(const DecoderConfig& cfg) {
  if (cfg.m_cores < 1)
    throw std::invalid_argument("decoder: m_cores must be >= 1");
  if (cfg.image_size % 4 != 0)
    throw std::invalid_argument("decoder: image_size must be divisible by 4");
  if (cfg.core_kernel % 2 == 0 || cfg.head_kernel % 2 == 0)
    throw std::invalid_argument("decoder: kernels must be odd");
}

template <typename T>
void init_decoder_params(ParamStore<T>& ps, const DecoderConfig& cfg,
                         Rng& rng) {
  validate_decoder_config(cfg);
  const int c = cfg.core_channels, cu = cfg.canvas_channels, z = cfg.z_channels;
  const int k = cfg.core_kernel, hk = cfg.head_kernel;
  ps.add_weight("dec.target_ds.w", {cfg.target_embed, 3, 4, 4}, rng);
  ps.add_zeros("dec.target_ds.b", {cfg.target_embed});
  ps.add_weight("dec.canvas_ds.w", {cfg.canvas_embed, cu, 4, 4}, rng);
  ps.add_zeros("dec.canvas_ds.b", {cfg.canvas_embed});
  const int gen_in = z + kPoseDim + cfg.d + cfg.canvas_embed + c;
  const int inf_in =
      cfg.target_embed + kPoseDim + cfg.d + c + cfg.canvas_embed + c;
  for (int m = 0; m < cfg.m_cores; ++m) {
    const std::string p = "dec.m" + std::to_string(m) + ".";
    ps.add_weight(p + "gen.gates.w", {4 * c, gen_in, k, k}, rng);
    ps.add_zeros(p + "gen.gates.b", {4 * c});
    ps.add_weight(p + "inf.gates.w", {4 * c, inf_in, k, k}, rng);
    ps.add_zeros(p + "inf.gates.b", {4 * c});
    ps.add_weight(p + "prior.w", {2 * z, c, hk, hk}, rng);
    ps.add_zeros(p + "prior.b", {2 * z});
    ps.add_weight(p + "post.w", {2 * z, c, hk, hk}, rng);
    ps.add_zeros(p + "post.b", {2 * z});
    ps.add_weight_transposed(p + "up.w", {c, cu, 4, 4}, rng);
    ps.add_zeros(p + "up.b", {cu});
  }
  ps.add_weight("dec.out.w", {3, cu, 1, 1}, rng);
  ps.add_zeros("dec.out.b", {3});
}

template <typename T>
struct CoreStateVars {
  Var<T> cell = nullptr;
  Var<T> hidden = nullptr;
};

template <typename T>
struct DecoderStateVars {
  std::vector<CoreStateVars<T>> gen;
  std::vector<CoreStateVars<T>> inf;
  Var<T> canvas = nullptr;
};

template <typename T>
struct LatentVars {
  Var<T> mean = nullptr;
  Var<T> log_variance = nullptr;
};

template <typename T>
struct StepOutputVars {
  Var<T> predicted = nullptr;               // (B, 3, H, W) in [0,1]
  std::vector<LatentVars<T>> priors;        // M entries
  std::vector<LatentVars<T>> posteriors;    // M entries, empty in generation
  DecoderStateVars<T> state_in;
  DecoderStateVars<T> state_out;
};

// All-zero states and canvas.
template <typename T>
DecoderStateVars<T> init_state(Graph<T>& g, const DecoderConfig& cfg,
                               int batch) {
  validate_decoder_config(cfg);
  DecoderStateVars<T> s;
  const int gr = cfg.grid();
  for (int m = 0; m < cfg.m_cores; ++m) {
    s.gen.push_back({g.constant(Tensor<T>({batch, cfg.core_channels, gr, gr})),
                     g.constant(Tensor<T>({batch, cfg.core_channels, gr, gr}))});
    s.inf.push_back({g.constant(Tensor<T>({batch, cfg.core_channels, gr, gr})),
                     g.constant(Tensor<T>({batch, cfg.core_channels, gr, gr}))});
  }
  s.canvas = g.constant(
      Tensor<T>({batch, cfg.canvas_channels, cfg.image_size, cfg.image_size}));
  return s;
}

// Deterministic reparameterisation noise; draws the same number of values per
// micro-step in both modes.
template <typename T>
class NoiseSource {
 public:
  explicit NoiseSource(Rng rng) : rng_(std::move(rng)) {}

  Tensor<T> next(const std::vector<int>& shape) {
    Tensor<T> t(shape);
    rng_.fill_normal(t);
    return t;
  }

 private:
  Rng rng_;
};

namespace detail {

template <typename T>
CoreStateVars<T> conv_lstm_step(Graph<T>& g, Var<T> external_in,
                                const CoreStateVars<T>& state, Var<T> gates_w,
                                Var<T> gates_b, int kernel, int c) {
  auto cat = concat_ch<T>(g, {external_in, state.hidden});
  auto gates = conv2d(g, cat, gates_w, gates_b, 1, kernel / 2);
  auto in_gate = sigmoid(g, slice_ch(g, gates, 0, c));
  auto forget_gate = sigmoid(g, slice_ch(g, gates, c, c));
  auto cand = tanh_op(g, slice_ch(g, gates, 2 * c, c));
  auto out_gate = sigmoid(g, slice_ch(g, gates, 3 * c, c));
  CoreStateVars<T> next;
  next.cell = add(g, mul(g, forget_gate, state.cell), mul(g, in_gate, cand));
  next.hidden = mul(g, out_gate, tanh_op(g, next.cell));
  return next;
}

template <typename T>
LatentVars<T> latent_head(Graph<T>& g, Var<T> hidden, Var<T> w, Var<T> b,
                          int kernel, int z) {
  auto stats = conv2d(g, hidden, w, b, 1, kernel / 2);
  LatentVars<T> out;
  out.mean = slice_ch(g, stats, 0, z);
  out.log_variance = clamp(g, slice_ch(g, stats, z, z), T(-10), T(10));
  return out;
}

template <typename T>
Var<T> sample_latent(Graph<T>& g, const LatentVars<T>& dist, Var<T> eps) {
  auto std_dev = exp_op(g, scale(g, dist.log_variance, T(0.5)));
  return add(g, dist.mean, mul(g, std_dev, eps));
}

}  // namespace detail

// One paired generation/inference micro-step. In training mode the inference
// core consumes (target embed, query pose, r*, generation hidden, canvas
// embed) and the latent is drawn from the posterior; in generation mode the
// inference state is untouched and the latent comes from the prior. The
// canvas accumulates a learned transposed convolution of the new generation
// hidden state.
template <typename T>
struct MicroStepResult {
  DecoderStateVars<T> state;
  LatentVars<T> prior;
  LatentVars<T> posterior;  // null vars in generation mode
  Var<T> z_sample = nullptr;
  Var<T> canvas_delta = nullptr;
};

template <typename T>
MicroStepResult<T> core_micro_step(
    Graph<T>& g, int m, const DecoderStateVars<T>& state, Var<T> r_star_map,
    Var<T> pose_map, Var<T> target_embed, RunMode mode, Var<T> eps,
    const ParamVars<T>& pv, const DecoderConfig& cfg) {
  if (m < 0 || m >= cfg.m_cores)
    throw std::invalid_argument("core_micro_step: core index out of range");
  if (mode == RunMode::kTraining && target_embed == nullptr)
    throw std::invalid_argument("core_micro_step: training requires a target");
  const std::string p = "dec.m" + std::to_string(m) + ".";
  const int c = cfg.core_channels, z = cfg.z_channels;

  MicroStepResult<T> out;
  out.state = state;

  auto canvas_embed = relu(
      g, conv2d(g, state.canvas, pv["dec.canvas_ds.w"], pv["dec.canvas_ds.b"],
                4, 0));

  // Prior from the incoming generation hidden state.
  out.prior = detail::latent_head(g, state.gen[m].hidden, pv[p + "prior.w"],
                                  pv[p + "prior.b"], cfg.head_kernel, z);

  if (mode == RunMode::kTraining) {
    auto inf_in = concat_ch<T>(
        g, {target_embed, pose_map, r_star_map, state.gen[m].hidden,
            canvas_embed});
    out.state.inf[m] =
        detail::conv_lstm_step(g, inf_in, state.inf[m], pv[p + "inf.gates.w"],
                               pv[p + "inf.gates.b"], cfg.core_kernel, c);
    out.posterior =
        detail::latent_head(g, out.state.inf[m].hidden, pv[p + "post.w"],
                            pv[p + "post.b"], cfg.head_kernel, z);
    out.z_sample = detail::sample_latent(g, out.posterior, eps);
  } else {
    out.z_sample = detail::sample_latent(g, out.prior, eps);
  }

  auto gen_in =
      concat_ch<T>(g, {out.z_sample, pose_map, r_star_map, canvas_embed});
  out.state.gen[m] =
      detail::conv_lstm_step(g, gen_in, state.gen[m], pv[p + "gen.gates.w"],
                             pv[p + "gen.gates.b"], cfg.core_kernel, c);
  out.canvas_delta = conv_transpose2d(g, out.state.gen[m].hidden,
                                      pv[p + "up.w"], pv[p + "up.b"], 4);
  out.state.canvas = add(g, state.canvas, out.canvas_delta);
  return out;
}

// One full rendering step: M micro-steps from state_in, then the predicted
// frame is a sigmoid 1x1 convolution of the final canvas.
template <typename T>
StepOutputVars<T> render_step(Graph<T>& g, Var<T> r_star, Var<T> query_pose,
                              Var<T> target, const DecoderStateVars<T>& state_in,
                              RunMode mode, const ParamVars<T>& pv,
                              const DecoderConfig& cfg,
                              NoiseSource<T>& noise) {
  if (mode == RunMode::kTraining && target == nullptr)
    throw std::invalid_argument("render_step: training requires a target");
  const int batch = r_star->value.dim(0);
  const int gr = cfg.grid();

  StepOutputVars<T> out;
  out.state_in = state_in;

  auto pose_map = tile_vec(g, query_pose, gr, gr);
  auto r_star_map = tile_vec(g, r_star, gr, gr);
  Var<T> target_embed = nullptr;
  if (mode == RunMode::kTraining)
    target_embed = relu(
        g, conv2d(g, target, pv["dec.target_ds.w"], pv["dec.target_ds.b"], 4,
                  0));

  DecoderStateVars<T> state = state_in;
  for (int m = 0; m < cfg.m_cores; ++m) {
    auto eps = g.constant(noise.next({batch, cfg.z_channels, gr, gr}));
    auto micro = core_micro_step(g, m, state, r_star_map, pose_map,
                                 target_embed, mode, eps, pv, cfg);
    state = micro.state;
    out.priors.push_back(micro.prior);
    if (mode == RunMode::kTraining) out.posteriors.push_back(micro.posterior);
  }
  out.state_out = state;
  out.predicted =
      sigmoid(g, conv2d(g, state.canvas, pv["dec.out.w"], pv["dec.out.b"], 1, 0));
  return out;
}

// Runs N rendering steps with full state threading: step n starts from step
// n-1's final states (step 1 from zeros). conditioning[n] supplies the
// representation for step n (r*_n for the attention model, the aggregate R
// for the ablations).
template <typename T>
std::vector<StepOutputVars<T>> decode_sequence(
    Graph<T>& g, const std::vector<Var<T>>& conditioning,
    const std::vector<Var<T>>& step_queries,
    const std::vector<Var<T>>& step_targets, RunMode mode,
    const ParamVars<T>& pv, const DecoderConfig& cfg, NoiseSource<T>& noise) {
  const std::size_t n = conditioning.size();
  if (n == 0) throw std::invalid_argument("decode_sequence: empty sequence");
  if (step_queries.size() != n)
    throw std::invalid_argument("decode_sequence: query count mismatch");
  if (mode == RunMode::kTraining && step_targets.size() != n)
    throw std::invalid_argument("decode_sequence: target count mismatch");
  if (mode == RunMode::kGeneration && !step_targets.empty())
    throw std::invalid_argument(
        "decode_sequence: generation mode must not receive target frames");

  const int batch = conditioning[0]->value.dim(0);
  std::vector<StepOutputVars<T>> outputs;
  DecoderStateVars<T> state = init_state(g, cfg, batch);
  for (std::size_t i = 0; i < n; ++i) {
    Var<T> target =
        mode == RunMode::kTraining ? step_targets[i] : nullptr;
    StepOutputVars<T> step = render_step(g, conditioning[i], step_queries[i],
                                         target, state, mode, pv, cfg, noise);
    state = step.state_out;
    outputs.push_back(std::move(step));
  }
  return outputs;
}

}  // namespace tgqn::model
