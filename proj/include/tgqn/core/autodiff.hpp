#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tgqn/core/tensor.hpp"

namespace tgqn {

// Reverse-mode autodiff over dense tensors. A Graph owns all nodes created
// during one forward pass; creation order is a valid topological order, so
// backward() walks nodes in reverse. Node handles stay valid for the
// lifetime of the graph.
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;      // allocated lazily, same shape as value
    bool requires_grad = false;
    bool grad_ready = false;
    std::function<void(Graph&, Node&)> backward_fn;  // empty for leaves
    int id = -1;

    Tensor<T>& g() {
      if (!grad_ready) {
        grad = Tensor<T>(value.shape());
        grad_ready = true;
      }
      return grad;
    }
  };

  using Var = Node*;

  Var leaf(Tensor<T> value, bool requires_grad) {
    return make(std::move(value), requires_grad, nullptr);
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var make(Tensor<T> value, bool requires_grad,
           std::function<void(Graph&, Node&)> backward_fn) {
    nodes_.push_back(std::make_unique<Node>());
    Node& n = *nodes_.back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward_fn = std::move(backward_fn);
    n.id = static_cast<int>(nodes_.size()) - 1;
    return &n;
  }

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every node with
  // requires_grad. root must be scalar.
  void backward(Var root) {
    if (root->value.size() != 1)
      throw std::invalid_argument("Graph::backward: root must be scalar");
    root->g()[0] = T(1);
    for (int i = root->id; i >= 0; --i) {
      Node& n = *nodes_[static_cast<std::size_t>(i)];
      if (n.backward_fn && n.requires_grad && n.grad_ready)
        n.backward_fn(*this, n);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

template <typename T>
using Var = typename Graph<T>::Node*;

// Adds src into dst->grad element-wise (the universal accumulation step of
// every backward function).
template <typename T>
inline void accumulate(Var<T> dst, const Tensor<T>& src) {
  if (!dst->requires_grad) return;
  Tensor<T>& g = dst->g();
  const T* s = src.data();
  T* d = g.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

}  // namespace tgqn
