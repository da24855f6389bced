#pragma once

#include <cmath>
#include <vector>

#include "tgqn/core/ops.hpp"
#include "tgqn/model/decoder.hpp"

namespace tgqn::model {

// Closed-form KL(q || p) for diagonal Gaussians given as (mean, log variance)
// maps, summed over all latent dimensions.
template <typename T>
Var<T> kl_diag_gaussian(Graph<T>& g, const LatentVars<T>& q,
                        const LatentVars<T>& p) {
  if (!q.mean->value.same_shape(p.mean->value) ||
      !q.log_variance->value.same_shape(p.log_variance->value))
    throw std::invalid_argument("kl_diag_gaussian: shape mismatch");
  auto log_ratio = sub(g, p.log_variance, q.log_variance);        // ln s_p^2/s_q^2
  auto var_ratio = exp_op(g, sub(g, q.log_variance, p.log_variance));
  auto mean_term = mul(g, square(g, sub(g, q.mean, p.mean)),
                       exp_op(g, scale(g, p.log_variance, T(-1))));
  auto body = add_scalar(
      g, add(g, add(g, var_ratio, mean_term), log_ratio), T(-1));
  return scale(g, sum_all(g, body), T(0.5));
}

// Negative log-likelihood of target under an independent Gaussian per pixel
// with mean = predicted and the given standard deviation, constant included.
template <typename T>
Var<T> recon_nll(Graph<T>& g, Var<T> target, Var<T> predicted, T sigma) {
  if (sigma <= T(0))
    throw std::invalid_argument("recon_nll: sigma must be positive");
  if (!target->value.same_shape(predicted->value))
    throw std::invalid_argument("recon_nll: shape mismatch");
  const T pixels = static_cast<T>(target->value.size());
  auto sq = sum_all(g, square(g, sub(g, target, predicted)));
  const T log_const =
      pixels * (std::log(sigma) + T(0.5) * std::log(T(2) * static_cast<T>(M_PI)));
  return add_scalar(g, scale(g, sq, T(1) / (T(2) * sigma * sigma)), log_const);
}

template <typename T>
struct LossVars {
  Var<T> total = nullptr;
  std::vector<Var<T>> recon_per_step;
  std::vector<std::vector<Var<T>>> kl_per_step_per_core;
  T beta = T(1);
  T sigma = T(1);
};

// Plain-number view of a loss graph, for logging and tests.
struct LossBreakdown {
  double total = 0;
  std::vector<double> recon_per_step;
  std::vector<std::vector<double>> kl_per_step_per_core;
  double beta = 1;
  double sigma = 1;
};

// Sequential ELBO: sum of per-step reconstruction NLL plus beta times the
// KL between posterior and prior of every core at every step.
template <typename T>
LossVars<T> tgqn_loss(Graph<T>& g,
                      const std::vector<StepOutputVars<T>>& step_outputs,
                      const std::vector<Var<T>>& targets, T beta, T sigma) {
  if (step_outputs.empty())
    throw std::invalid_argument("tgqn_loss: no step outputs");
  if (targets.size() != step_outputs.size())
    throw std::invalid_argument("tgqn_loss: target count mismatch");

  LossVars<T> out;
  out.beta = beta;
  out.sigma = sigma;
  Var<T> recon_sum = nullptr;
  Var<T> kl_sum = nullptr;
  for (std::size_t n = 0; n < step_outputs.size(); ++n) {
    const auto& step = step_outputs[n];
    if (step.posteriors.size() != step.priors.size() || step.posteriors.empty())
      throw std::invalid_argument(
          "tgqn_loss: training-mode outputs with posteriors required");
    auto recon = recon_nll(g, targets[n], step.predicted, sigma);
    out.recon_per_step.push_back(recon);
    recon_sum = recon_sum ? add(g, recon_sum, recon) : recon;
    out.kl_per_step_per_core.emplace_back();
    for (std::size_t m = 0; m < step.priors.size(); ++m) {
      auto kl = kl_diag_gaussian(g, step.posteriors[m], step.priors[m]);
      out.kl_per_step_per_core.back().push_back(kl);
      kl_sum = kl_sum ? add(g, kl_sum, kl) : kl;
    }
  }
  out.total = add(g, recon_sum, scale(g, kl_sum, beta));
  return out;
}

// Single-step ELBO with beta = 1 (the non-sequential baseline objective).
template <typename T>
LossVars<T> gqn_loss(Graph<T>& g, const StepOutputVars<T>& output,
                     Var<T> target, T sigma) {
  return tgqn_loss<T>(g, std::vector<StepOutputVars<T>>{output},
                      std::vector<Var<T>>{target}, T(1), sigma);
}

template <typename T>
LossBreakdown loss_breakdown(const LossVars<T>& lv) {
  LossBreakdown b;
  b.total = static_cast<double>(lv.total->value[0]);
  for (auto* r : lv.recon_per_step)
    b.recon_per_step.push_back(static_cast<double>(r->value[0]));
  for (const auto& step : lv.kl_per_step_per_core) {
    b.kl_per_step_per_core.emplace_back();
    for (auto* k : step)
      b.kl_per_step_per_core.back().push_back(static_cast<double>(k->value[0]));
  }
  b.beta = static_cast<double>(lv.beta);
  b.sigma = static_cast<double>(lv.sigma);
  return b;
}

struct SigmaSchedule {
  double sigma_start = 2.0;
  double sigma_end = 0.7;
  double anneal_frac = 0.8;
};

// Linear anneal over the first anneal_frac of max_steps, constant after.
inline double sigma_schedule(long long step, long long max_steps,
                             const SigmaSchedule& s = {}) {
  if (step < 0) throw std::invalid_argument("sigma_schedule: negative step");
  const double anneal_steps = s.anneal_frac * static_cast<double>(max_steps);
  if (anneal_steps <= 0 || static_cast<double>(step) >= anneal_steps)
    return s.sigma_end;
  const double t = static_cast<double>(step) / anneal_steps;
  return s.sigma_start + t * (s.sigma_end - s.sigma_start);
}

}  // namespace tgqn::model
