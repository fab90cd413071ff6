#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <vector>

#include "cianet/errors.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
  bool operator==(const Var&) const = default;
};

template <class T>
class Tape;

/// Gradients produced by Tape::backward, indexed by the leaf they belong to.
template <class T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor<T>>> g) : grads_(std::move(g)) {}

  bool has(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }
  const Tensor<T>& at(Var v) const {
    if (!has(v)) throw ContractError("no gradient recorded for node " + std::to_string(v.id));
    return *grads_[v.id];
  }

 private:
  std::vector<std::optional<Tensor<T>>> grads_;
};

/// Single-owner record of a computation for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order. References returned by value() stay valid as more
/// nodes are appended. Ops record a closure that, given the gradient of their
/// output, accumulates into the gradients of their inputs.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, true, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Appends an op output. The closure is kept only if some input needs a
  /// gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }
  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) {
      if (v.id >= nodes_.size()) throw ContractError("op input refers to an unrecorded node");
      needs = needs || nodes_[v.id].requires_grad;
    }
    Node node{std::move(value), needs ? std::move(inputs) : std::vector<Var>{}, needs, false,
              needs ? std::move(fn) : nullptr};
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Var>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

  /// Value of the node whose backward closure is currently running.
  const Tensor<T>& output() const { return nodes_[active_].value; }

  /// Zero-initialized gradient buffer of `v`, or nullptr if `v` needs none.
  /// Valid only while backward is running.
  T* grad_ptr(Var v) {
    Node& node = nodes_[v.id];
    if (!node.requires_grad) return nullptr;
    auto& g = grads_[v.id];
    if (!g) g.emplace(node.value.shape(), T(0));
    return g->data();
  }

  Gradients<T> backward(Var loss) {
    if (consumed_) throw ContractError("backward already ran on this tape");
    if (loss.id >= nodes_.size()) throw ContractError("loss is not on this tape");
    if (shape(loss) != Shape{1, 1, 1, 1})
      throw ContractError("backward requires a 1x1x1x1 scalar loss, got " + shape(loss).str());
    consumed_ = true;
    grads_.assign(nodes_.size(), std::nullopt);
    if (!nodes_[loss.id].requires_grad) return Gradients<T>(std::move(grads_));
    grads_[loss.id].emplace(Shape{1, 1, 1, 1}, T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.is_leaf || !grads_[i] || !node.backward) continue;
      active_ = i;
      node.backward(*this, *grads_[i]);
      grads_[i].reset();
      node.backward = nullptr;
    }
    return Gradients<T>(std::move(grads_));
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<Var> inputs;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable references across appends
  std::vector<std::optional<Tensor<T>>> grads_;
  std::size_t active_ = 0;
  bool consumed_ = false;
};

}  // namespace cianet
