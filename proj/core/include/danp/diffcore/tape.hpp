#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "danp/diffcore/tensor.hpp"

namespace danp::diffcore {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// owning tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  std::uint32_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Gradient slots handed to a node's backward function, one per parent.
/// A slot is null when that parent does not require a gradient.
using GradSlots = std::vector<Tensor*>;
using BackwardFn = std::function<void(const Tensor& grad_out, GradSlots& parent_grads)>;

class Gradients;

/// Ordered record of executed primitives. Nodes are appended in execution
/// order, so parents always precede children. Not thread-safe; use one tape
/// per unit of work.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records a primitive's output. The backward function is kept only if
  /// some parent requires a gradient.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  /// Reverse sweep from a scalar root. Every node is visited once; parent
  /// gradients are accumulated.
  Gradients backward(Var root) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::uint32_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::deque<Node> nodes_;
};

/// Result of Tape::backward: gradients for every leaf that requires one.
class Gradients {
 public:
  /// Gradient of the root w.r.t. a leaf. Throws ContractError for vars that
  /// are not gradient-carrying leaves of the tape.
  const Tensor& of(const Var& leaf) const;
  bool has(const Var& leaf) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> slots_;
  std::vector<bool> is_leaf_;
};

}  // namespace danp::diffcore
