#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tgqn/model/metrics.hpp"
#include "tgqn/pipeline/checkpoint.hpp"
#include "tgqn/pipeline/eval.hpp"
#include "tgqn/pipeline/forward.hpp"
#include "tgqn/scene/shard_io.hpp"

namespace tgqn::pipeline {

struct TrainLogRow {
  long long step = 0;
  double loss = 0;
  double recon = 0;
  double kl = 0;
  double sigma = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<double> loss_per_step;  // full-resolution loss trace
  std::vector<TrainLogRow> log_rows;
  std::vector<MetricHistoryEntry> history;
  Checkpoint<float> checkpoint;
};

namespace detail {

struct BatchItem {
  int scene = 0;
  std::vector<int> views;  // first entry is the query view
};

inline std::vector<BatchItem> sample_batch(Rng& rng, const scene::Shard& data,
                                           int batch, int n_views) {
  std::vector<BatchItem> items;
  const int scenes = static_cast<int>(data.scenes.size());
  const int v = data.header.views_per_scene;
  for (int b = 0; b < batch; ++b) {
    BatchItem item;
    item.scene = static_cast<int>(rng.uniform_int(0, scenes - 1));
    item.views = rng.sample_distinct(v, n_views + 1);
    items.push_back(std::move(item));
  }
  return items;
}

inline OrderedContext context_of(const scene::Shard& data,
                                 const BatchItem& item, bool ordered) {
  std::vector<Observation> obs;
  for (std::size_t i = 1; i < item.views.size(); ++i)
    obs.push_back({data.frame(item.scene, item.views[i]),
                   data.scenes[item.scene].poses[item.views[i]]});
  const int q = item.views[0];
  return order_observations(std::move(obs),
                            data.scenes[item.scene].poses[q],
                            data.frame(item.scene, q), ordered);
}

// Contiguous shard ranges fixed by the config, not by the machine.
inline std::vector<std::pair<int, int>> shard_ranges(int batch, int shards) {
  std::vector<std::pair<int, int>> out;
  const int base = batch / shards, extra = batch % shards;
  int at = 0;
  for (int s = 0; s < shards; ++s) {
    const int len = base + (s < extra ? 1 : 0);
    out.emplace_back(at, at + len);
    at += len;
  }
  return out;
}

struct ShardResult {
  double loss = 0;
  double recon = 0;
  double kl = 0;
  std::map<std::string, Tensor<float>> grads;
};

}  // namespace detail

class Trainer {
 public:
  Trainer(RunConfig config, const scene::Shard* train_data,
          const scene::Shard* eval_data, std::string out_dir)
      : cfg_(std::move(config)),
        train_data_(train_data),
        eval_data_(eval_data),
        out_dir_(std::move(out_dir)),
        master_(Rng(cfg_.seed)) {
    validate_config(cfg_);
    if (train_data_->header.views_per_scene < cfg_.n_views + 1)
      throw std::invalid_argument(
          "train: dataset must hold at least n_views + 1 views per scene");
    if (train_data_->header.image_size != cfg_.image_size)
      throw std::invalid_argument("train: dataset image_size " +
                                  std::to_string(train_data_->header.image_size) +
                                  " != config image_size " +
                                  std::to_string(cfg_.image_size));
    params_ = init_params<float>(cfg_, master_.derive("init"));
    for (const auto& [name, tensor] : params_) {
      adam_m_.emplace(name, Tensor<float>(tensor.shape()));
      adam_v_.emplace(name, Tensor<float>(tensor.shape()));
    }
    if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
  }

  const ParamStore<float>& params() const { return params_; }
  const RunConfig& config() const { return cfg_; }

  double learning_rate(long long step) const {
    const double t =
        static_cast<double>(step) / static_cast<double>(cfg_.max_steps);
    return cfg_.lr_start + t * (cfg_.lr_end - cfg_.lr_start);
  }

  TrainResult run(bool quiet = false) {
    TrainResult result;
    model::SigmaSchedule sched{cfg_.sigma_start, cfg_.sigma_end,
                               cfg_.sigma_anneal_frac};
    for (long long step = 0; step < cfg_.max_steps; ++step) {
      const double sigma = model::sigma_schedule(step, cfg_.max_steps, sched);
      const double lr = learning_rate(step);
      const auto stats = train_step(step, static_cast<float>(sigma), lr);
      result.loss_per_step.push_back(stats.loss);
      if (step % cfg_.log_interval == 0 || step + 1 == cfg_.max_steps) {
        result.log_rows.push_back(
            {step, stats.loss, stats.recon, stats.kl, sigma, lr});
        if (!quiet)
          std::cerr << "[train " << variant_name(cfg_.variant) << " seed "
                    << cfg_.seed << "] step " << step << " loss " << stats.loss
                    << " recon " << stats.recon << " kl " << stats.kl << "\n";
      }
      const bool last = step + 1 == cfg_.max_steps;
      if (eval_data_ && cfg_.eval_interval > 0 &&
          ((step + 1) % cfg_.eval_interval == 0 || last)) {
        const auto report =
            evaluate_params(params_, cfg_, *eval_data_, cfg_.eval_scenes,
                            cfg_.eval_repeats, cfg_.seed);
        result.history.push_back(
            {step + 1, report.l1_mean, report.l2_mean, report.ssim_mean});
        if (!quiet)
          std::cerr << "[eval] step " << step + 1 << " l1 " << report.l1_mean
                    << " l2 " << report.l2_mean << " ssim " << report.ssim_mean
                    << "\n";
      }
      if (!out_dir_.empty() && cfg_.checkpoint_interval > 0 &&
          (step + 1) % cfg_.checkpoint_interval == 0 && !last) {
        Checkpoint<float> ck;
        ck.config = cfg_;
        ck.global_step = step + 1;
        ck.sigma = sigma;
        ck.history = result.history;
        ck.params = params_;
        save_checkpoint(
            ck, out_dir_ + "/checkpoint_step" + std::to_string(step + 1) +
                    ".tgqn");
      }
    }
    result.checkpoint.config = cfg_;
    result.checkpoint.global_step = cfg_.max_steps;
    result.checkpoint.sigma =
        model::sigma_schedule(cfg_.max_steps - 1, cfg_.max_steps, sched);
    result.checkpoint.history = result.history;
    result.checkpoint.params = params_;
    if (!out_dir_.empty()) {
      save_checkpoint(result.checkpoint, out_dir_ + "/checkpoint.tgqn");
      write_log(result);
    }
    return result;
  }

 private:
  struct StepStats {
    double loss = 0, recon = 0, kl = 0;
  };

  StepStats train_step(long long step, float sigma, double lr) {
    Rng batch_rng = master_.derive("batch").derive(static_cast<std::uint64_t>(step));
    const auto items = detail::sample_batch(batch_rng, *train_data_,
                                            cfg_.batch_size, cfg_.n_views);
    std::vector<OrderedContext> contexts;
    for (const auto& item : items)
      contexts.push_back(detail::context_of(*train_data_, item, cfg_.order_train));

    const auto ranges = detail::shard_ranges(cfg_.batch_size, cfg_.shards);
    std::vector<detail::ShardResult> partials(ranges.size());
    std::vector<std::thread> workers;
    for (std::size_t s = 0; s < ranges.size(); ++s) {
      workers.emplace_back([&, s] {
        partials[s] = run_shard(contexts, ranges[s], step,
                                static_cast<std::uint64_t>(s), sigma);
      });
    }
    for (auto& w : workers) w.join();

    StepStats stats;
    for (const auto& p : partials) {
      stats.loss += p.loss;
      stats.recon += p.recon;
      stats.kl += p.kl;
    }
    if (!std::isfinite(stats.loss)) {
      dump_bad_batch(step, items, stats.loss);
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step) +
                               " (diagnostic dump written)");
    }

    // Adam over the lexicographic parameter order; shard gradients already
    // carry the 1/batch mean scaling.
    const double t = static_cast<double>(step) + 1.0;
    const double bc1 = 1.0 - std::pow(0.9, t);
    const double bc2 = 1.0 - std::pow(0.999, t);
    for (auto& [name, tensor] : params_) {
      Tensor<float>& m = adam_m_.at(name);
      Tensor<float>& v = adam_v_.at(name);
      for (std::size_t i = 0; i < tensor.size(); ++i) {
        float grad = 0;
        for (const auto& p : partials) grad += p.grads.at(name)[i];
        m[i] = 0.9f * m[i] + 0.1f * grad;
        v[i] = 0.999f * v[i] + 0.001f * grad * grad;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        tensor[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + 1e-8));
      }
    }
    return stats;
  }

  detail::ShardResult run_shard(const std::vector<OrderedContext>& contexts,
                                std::pair<int, int> range, long long step,
                                std::uint64_t shard_index, float sigma) {
    detail::ShardResult out;
    if (range.first == range.second) return out;
    const std::vector<OrderedContext> slice(contexts.begin() + range.first,
                                            contexts.begin() + range.second);
    Graph<float> g;
    ParamVars<float> pv(g, params_, true);
    const auto batch = assemble_batch<float>(slice, cfg_.image_size);
    model::NoiseSource<float> noise(master_.derive("noise")
                                        .derive(static_cast<std::uint64_t>(step))
                                        .derive(shard_index));
    const auto fwd = forward_variant(g, pv, batch, model::RunMode::kTraining,
                                     cfg_, noise, cfg_.masked_train);
    auto loss = variant_loss<float>(g, cfg_, fwd, batch, sigma);
    auto scaled =
        scale(g, loss.total, 1.0f / static_cast<float>(cfg_.batch_size));
    g.backward(scaled);

    out.loss = scaled->value[0];
    for (auto* r : loss.recon_per_step)
      out.recon += r->value[0] / cfg_.batch_size;
    for (const auto& per_step : loss.kl_per_step_per_core)
      for (auto* k : per_step) out.kl += k->value[0] / cfg_.batch_size;
    for (const auto& [name, tensor] : params_) {
      Var<float> leaf = pv[name];
      out.grads.emplace(name, leaf->grad_ready ? leaf->grad
                                               : Tensor<float>(tensor.shape()));
    }
    return out;
  }

  void dump_bad_batch(long long step, const std::vector<detail::BatchItem>& items,
                      double loss) const {
    if (out_dir_.empty()) return;
    std::ofstream os(out_dir_ + "/nan_dump.txt");
    os << "step=" << step << "\nloss=" << loss << "\n";
    for (const auto& item : items) {
      os << "scene=" << item.scene << " views=";
      for (std::size_t i = 0; i < item.views.size(); ++i)
        os << (i ? "," : "") << item.views[i];
      os << "\n";
    }
  }

  void write_log(const TrainResult& result) const {
    std::ofstream os(out_dir_ + "/train_log.csv");
    os << "step,loss,recon,kl,sigma,lr\n";
    os.precision(17);
    for (const auto& row : result.log_rows)
      os << row.step << "," << row.loss << "," << row.recon << "," << row.kl
         << "," << row.sigma << "," << row.lr << "\n";
  }

  RunConfig cfg_;
  const scene::Shard* train_data_;
  const scene::Shard* eval_data_;
  std::string out_dir_;
  Rng master_;
  ParamStore<float> params_;
  std::map<std::string, Tensor<float>> adam_m_, adam_v_;
};

}  // namespace tgqn::pipeline
