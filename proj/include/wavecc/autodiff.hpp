#pragma once

// Reverse-mode differentiation over a dynamically recorded graph.
//
// Every operation creates a Node holding its value, its parents and a
// closure that pushes the node's gradient into the parents. backward()
// visits reachable nodes in decreasing creation order, which is a valid
// reverse topological order and makes gradient accumulation order a pure
// function of the graph.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wavecc/tensor.hpp"

namespace wavecc {

namespace detail {
inline std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_disabled_flag() {
  thread_local bool disabled = false;
  return disabled;
}
}  // namespace detail

/// While alive, operations on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled_flag()) { detail::grad_disabled_flag() = true; }
  ~NoGradGuard() { detail::grad_disabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return !detail::grad_disabled_flag(); }

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = detail::next_node_seq();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&, const Tensor<T>&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Shared handle to a graph node. Copies alias the same node.
template <class T>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  /// Adds `g` into this variable's gradient buffer.
  void accumulate(const Tensor<T>& g) const {
    Tensor<T>& buf = node_->grad_buffer();
    T* dst = buf.ptr();
    const T* src = g.ptr();
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Backward closure: receives the gradient flowing into the node and the
/// node's own forward value.
template <class T>
using BackwardFn = std::function<void(const Tensor<T>& grad, const Tensor<T>& out)>;

/// Builds the result node of an operation. The closure is only kept when
/// some parent requires a gradient and recording is enabled.
template <class T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn<T> backward) {
  Var<T> out(std::move(value));
  bool needs = false;
  if (grad_enabled()) {
    for (const Var<T>& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    Node<T>* node = out.node();
    node->requires_grad = true;
    node->is_leaf = false;
    for (const Var<T>& p : parents) {
      if (p.defined()) node->parents.push_back(p.shared());
    }
    node->backward = std::move(backward);
  }
  return out;
}

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Repeated calls without zeroing add up.
template <class T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(ErrorKind::kShape, "backward: loss must be a scalar, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  for (Node<T>* n : order) {
    if (!n->is_leaf) n->grad = Tensor<T>();
  }
  loss.node()->grad_buffer()[0] += T{1};
  for (Node<T>* n : order) {
    if (n->is_leaf || !n->backward) continue;
    // No gradient reached this node.
    if (n->grad.size() != n->value.size()) continue;
    n->backward(n->grad, n->value);
    n->grad = Tensor<T>();
  }
}

}  // namespace wavecc
