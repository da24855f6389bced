#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tgqn/pipeline/forward.hpp"

namespace tgqn::pipeline {

// Tiny binary image writers; no external format dependencies.
inline void write_pgm(const std::string& path, const Tensor<float>& gray) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("pgm '" + path + "': cannot open");
  const int h = gray.dim(0), w = gray.dim(1);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = std::min(1.0f, std::max(0.0f, gray.at(y, x)));
      os.put(static_cast<char>(std::lround(v * 255.0f)));
    }
}

inline void write_ppm(const std::string& path, const scene::Frame& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("ppm '" + path + "': cannot open");
  const int h = img.dim(0), w = img.dim(1);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::min(1.0f, std::max(0.0f, img.at(y, x, c)));
        os.put(static_cast<char>(std::lround(v * 255.0f)));
      }
}

struct AttentionDump {
  std::vector<std::string> files;
};

// Writes every layer/head/rendering-step score row as CSV plus grayscale
// images of the final-layer head-mean matrix (whole matrix and one row per
// rendering step). Deterministic byte-for-byte given the same checkpoint and
// episode.
inline AttentionDump dump_attention(const ParamStore<float>& params,
                                    const RunConfig& cfg,
                                    const std::vector<Observation>& context,
                                    const scene::PoseSpec& query_pose,
                                    const scene::Frame& query_frame,
                                    const std::string& out_dir,
                                    std::uint64_t seed) {
  if (cfg.variant != Variant::kTgqn)
    throw std::invalid_argument(
        "dump_attention: unsupported variant " + variant_name(cfg.variant) +
        " (attention scores exist only for tgqn)");
  std::filesystem::create_directories(out_dir);

  RunConfig run_cfg = cfg;
  run_cfg.n_views = static_cast<int>(context.size());
  const auto ctx = order_observations(context, query_pose, query_frame,
                                      cfg.order_eval);
  Graph<float> g;
  ParamVars<float> pv(g, params, false);
  const auto batch = assemble_batch<float>({ctx}, cfg.image_size);
  model::NoiseSource<float> noise(Rng(seed).derive("attn-dump"));
  const auto fwd = forward_tgqn(g, pv, batch, cfg.masked_eval,
                                model::RunMode::kGeneration, run_cfg, noise);

  AttentionDump dump;
  const int n = batch.n_views;
  char buf[64];
  for (std::size_t l = 0; l < fwd.attention.layer_scores.size(); ++l) {
    const auto& scores = fwd.attention.layer_scores[l]->value;
    for (int h = 0; h < cfg.attn_heads; ++h) {
      for (int step = 0; step < n; ++step) {
        std::snprintf(buf, sizeof(buf), "attn_l%zu_h%d_step%d.csv", l, h, step);
        const std::string path = out_dir + "/" + buf;
        std::ofstream os(path, std::ios::trunc);
        os << "row_view,col_view,score\n";
        os.precision(9);
        for (int j = 0; j < n; ++j)
          os << step << "," << j << "," << scores.at(0, h, step, j) << "\n";
        dump.files.push_back(path);
      }
    }
  }

  // Final layer, mean over heads: the reported visualisation matrix.
  const auto mean =
      model::mean_head_scores(fwd.attention.layer_scores.back()->value, 0);
  Tensor<float> img({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) img.at(i, j) = mean.at(i, j);
  write_pgm(out_dir + "/attn_mean.pgm", img);
  dump.files.push_back(out_dir + "/attn_mean.pgm");
  for (int step = 0; step < n; ++step) {
    Tensor<float> row({1, n});
    for (int j = 0; j < n; ++j) row.at(0, j) = mean.at(step, j);
    std::snprintf(buf, sizeof(buf), "attn_mean_step%d.pgm", step);
    write_pgm(out_dir + "/" + buf, row);
    dump.files.push_back(out_dir + "/" + buf);
  }
  return dump;
}

}  // namespace tgqn::pipeline
