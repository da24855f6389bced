#pragma once

#include <string>
#include <vector>

#include "tgqn/model/metrics.hpp"
#include "tgqn/pipeline/forward.hpp"
#include "tgqn/scene/shard_io.hpp"

namespace tgqn::pipeline {

// Evaluation protocol: per scene, draw the configured number of context
// views in random order, then predict every remaining view in generation
// mode. Metrics aggregate per predicted image over all scenes and repeats;
// target frames never reach the decoder.
inline model::MetricsReport evaluate_params(const ParamStore<float>& params,
                                            const RunConfig& cfg,
                                            const scene::Shard& data,
                                            int num_scenes, int repeats,
                                            std::uint64_t seed) {
  if (data.header.image_size != cfg.image_size)
    throw std::invalid_argument(
        "evaluate: dataset image_size " +
        std::to_string(data.header.image_size) + " != checkpoint image_size " +
        std::to_string(cfg.image_size));
  const int v = data.header.views_per_scene;
  const int ctx = cfg.eval_context_views;
  if (v <= ctx)
    throw std::invalid_argument(
        "evaluate: dataset needs more views than eval_context_views");
  const int scenes =
      std::min<int>(num_scenes, static_cast<int>(data.scenes.size()));
  const int targets_per_scene = v - ctx;

  RunConfig run_cfg = cfg;
  run_cfg.n_views = ctx;
  const Rng base = Rng(seed).derive("eval");

  model::MetricsAccumulator acc;
  for (int s = 0; s < scenes; ++s) {
    for (int rep = 0; rep < repeats; ++rep) {
      Rng rng = base.derive(static_cast<std::uint64_t>(s))
                    .derive(static_cast<std::uint64_t>(rep));
      const std::vector<int> picks = rng.sample_distinct(v, ctx);
      std::vector<bool> used(v, false);
      for (int p : picks) used[p] = true;

      std::vector<Observation> obs;
      for (int p : picks)
        obs.push_back({data.frame(s, p), data.scenes[s].poses[p]});

      std::vector<OrderedContext> contexts;
      std::vector<scene::Frame> truths;
      for (int q = 0; q < v; ++q) {
        if (used[q]) continue;
        contexts.push_back(order_observations(obs, data.scenes[s].poses[q],
                                              data.frame(s, q),
                                              cfg.order_eval));
        truths.push_back(data.frame(s, q));
      }

      Graph<float> g;
      ParamVars<float> pv(g, params, false);
      const auto batch = assemble_batch<float>(contexts, cfg.image_size);
      model::NoiseSource<float> noise(rng.derive("noise"));
      const auto fwd =
          forward_variant(g, pv, batch, model::RunMode::kGeneration, run_cfg,
                          noise, cfg.masked_eval);
      const auto& final_step = fwd.steps.back();
      for (int row = 0; row < targets_per_scene; ++row) {
        Tensor<float> chw({3, cfg.image_size, cfg.image_size});
        const std::size_t stride =
            static_cast<std::size_t>(3) * cfg.image_size * cfg.image_size;
        std::copy(final_step.predicted->value.data() + row * stride,
                  final_step.predicted->value.data() + (row + 1) * stride,
                  chw.data());
        acc.add_pair(truths[row], model::chw_to_frame(chw));
      }
    }
  }
  return acc.report();
}

}  // namespace tgqn::pipeline
