#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

#include "eclab/gradcore/tensor.hpp"

namespace eclab {

template <typename T>
class Tape;

/// Handle to a tensor recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Reverse-mode computation record.
///
/// Nodes are appended in evaluation order, so the node list is already
/// topologically sorted; backward() walks it once in exact reverse. A tape
/// is single-threaded and supports exactly one backward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    value.set_requires_grad(requires_grad);
    value.clear_grad();
    nodes_.push_back(Node{std::move(value), nullptr});
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an operation output. The backward rule is kept only when at
  /// least one input participates in differentiation.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error("operation mixes variables from different tapes");
      needs = needs || nodes_[in.id].value.requires_grad();
    }
    value.set_requires_grad(needs);
    nodes_.push_back(Node{std::move(value), needs ? std::move(fn) : nullptr});
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error("operation mixes variables from different tapes");
      needs = needs || nodes_[in.id].value.requires_grad();
    }
    value.set_requires_grad(needs);
    nodes_.push_back(Node{std::move(value), needs ? std::move(fn) : nullptr});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).value.requires_grad(); }

  /// Upstream gradient of node `id`; valid inside a backward rule.
  std::span<const T> upstream(std::size_t id) const { return nodes_[id].value.grad(); }

  /// Gradient accumulator of an input, or an empty span when the input
  /// does not require a gradient.
  std::span<T> sink(Var<T> v) {
    auto& t = nodes_[v.id].value;
    if (!t.requires_grad()) return {};
    return t.grad();
  }

  void backward(Var<T> loss) {
    if (backward_done_) throw std::logic_error("backward() already ran on this tape");
    auto& out = nodes_.at(loss.id).value;
    if (out.numel() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(out.shape()));
    }
    backward_done_ = true;
    if (!out.requires_grad()) return;
    out.grad()[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.backward && node.value.has_grad()) node.backward(*this, i);
    }
  }

  /// Accumulated gradient of `v` after backward(); zeros when no path
  /// reached it.
  std::vector<T> grad(Var<T> v) const {
    const auto& t = nodes_.at(v.id).value;
    if (t.has_grad()) return t.grad();
    return std::vector<T>(t.numel(), T(0));
  }

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor<T> value;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace eclab
