#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgqn/core/autodiff.hpp"
#include "tgqn/core/rng.hpp"
#include "tgqn/core/tensor.hpp"

namespace tgqn {

// Named parameter arrays. Iteration order is lexicographic by name, which
// fixes the update and serialisation order across runs.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    auto [it, fresh] = params_.emplace(name, std::move(init));
    if (!fresh) throw std::invalid_argument("ParamStore: duplicate name " + name);
    return it->second;
  }

  // Fan-in scaled uniform weights; the fan-in is the product of all dims
  // except the first for linear/conv weights.
  Tensor<T>& add_weight(const std::string& name, std::vector<int> shape,
                        Rng& rng) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i)
      fan_in *= static_cast<std::size_t>(shape[i]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t(shape);
    rng.fill_uniform(t, -bound, bound);
    return add(name, std::move(t));
  }

  // Transposed-conv weight (C, O, k, k): fan-in is per input channel.
  Tensor<T>& add_weight_transposed(const std::string& name,
                                   std::vector<int> shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[0]) * shape[2] * shape[3];
    const double bound = 1.0 / std::sqrt(fan_in);
    Tensor<T> t(shape);
    rng.fill_uniform(t, -bound, bound);
    return add(name, std::move(t));
  }

  Tensor<T>& add_zeros(const std::string& name, std::vector<int> shape) {
    return add(name, Tensor<T>(shape));
  }

  Tensor<T>& add_ones(const std::string& name, std::vector<int> shape) {
    return add(name, Tensor<T>::full(shape, T(1)));
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("ParamStore: unknown name " + name);
    return it->second;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("ParamStore: unknown name " + name);
    return it->second;
  }

  std::size_t count() const { return params_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, v] : params_) out.add(k, v.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

// Per-graph view of a ParamStore: every parameter becomes a leaf node so the
// same store can feed several concurrent graphs.
template <typename T>
class ParamVars {
 public:
  ParamVars() = default;
  ParamVars(Graph<T>& g, const ParamStore<T>& store, bool requires_grad) {
    for (const auto& [name, tensor] : store)
      vars_[name] = g.leaf(tensor, requires_grad);
  }

  Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end())
      throw std::invalid_argument("ParamVars: unknown name " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return vars_.count(name) > 0; }

  auto begin() const { return vars_.begin(); }
  auto end() const { return vars_.end(); }

 private:
  std::map<std::string, Var<T>> vars_;
};

}  // namespace tgqn
