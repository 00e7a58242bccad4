#include "d3seg/autodiff.hpp"

#include <algorithm>

namespace d3seg {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore& store, const std::string& name) {
  const std::size_t index = store.index_of(name);
  ParamStore* target = &store;
  Backward accumulate = [target, index](Tape&, std::span<const double> g, const Tensor&) {
    auto& dst = target->entry(index).grad.storage();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  };
  nodes_.push_back(Node{store.entry(index).value, true, {}, std::move(accumulate)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape_ != this) throw std::invalid_argument("operand recorded on a different tape");
    needs = needs || nodes_[v.id_].requires_grad;
  }
  Node node{std::move(value), needs, {}, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

std::span<const double> Tape::grad(Var v) const { return nodes_[v.id_].grad; }

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " + to_string(root.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(root.id_)[0] = 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, node.grad, node.value);
  }
}

ParamBinding::ParamBinding(Tape& tape, ParamStore& store, Filter trainable)
    : tape_(&tape), store_(&store), trainable_(std::move(trainable)) {}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& store)
    : tape_(&tape),
      store_(const_cast<ParamStore*>(&store)),
      trainable_([](std::string_view) { return false; }) {}

Var ParamBinding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = (!trainable_ || trainable_(name)) ? tape_->param(*store_, name)
                                            : tape_->constant(store_->value(name));
  bound_.emplace(name, v);
  return v;
}

}  // namespace d3seg
