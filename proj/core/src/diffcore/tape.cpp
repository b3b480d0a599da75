#include "danp/diffcore/tape.hpp"

#include <algorithm>

#include "danp/error.hpp"

namespace danp::diffcore {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const auto& p : parents) {
    if (&p.tape() != this) throw ContractError("operands recorded on different tapes");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || p.requires_grad();
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Gradients Tape::backward(Var root) const {
  if (&root.tape() != this) throw ContractError("backward: root belongs to another tape");
  if (nodes_.empty()) throw ContractError("backward: empty tape");
  if (root.numel() != 1) {
    throw ContractError("backward: root must be scalar, got " + shape_string(root.shape()));
  }

  Gradients out;
  out.slots_.resize(nodes_.size());
  out.is_leaf_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) out.is_leaf_[i] = nodes_[i].is_leaf && nodes_[i].requires_grad;
  auto& slots = out.slots_;
  if (!nodes_[root.id()].requires_grad) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (out.is_leaf_[i]) slots[i] = Tensor(nodes_[i].value.shape(), 0.0f);
    }
    return out;
  }

  slots[root.id()] = Tensor(root.shape(), 1.0f);

  GradSlots parent_grads;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!slots[i] || node.is_leaf || !node.backward) continue;
    parent_grads.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const auto pid = node.parents[k];
      if (!nodes_[pid].requires_grad) continue;
      if (!slots[pid]) slots[pid] = Tensor(nodes_[pid].value.shape(), 0.0f);
      parent_grads[k] = &*slots[pid];
    }
    node.backward(*slots[i], parent_grads);
    // Interior gradients are no longer needed once propagated.
    slots[i].reset();
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (out.is_leaf_[i] && !slots[i]) slots[i] = Tensor(nodes_[i].value.shape(), 0.0f);
  }
  return out;
}

bool Gradients::has(const Var& leaf) const {
  return leaf.id() < slots_.size() && is_leaf_[leaf.id()];
}

const Tensor& Gradients::of(const Var& leaf) const {
  if (!has(leaf)) throw ContractError("gradient requested for a var that is not a gradient leaf");
  return *slots_[leaf.id()];
}

}  // namespace danp::diffcore
