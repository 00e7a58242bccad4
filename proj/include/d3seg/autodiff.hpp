#pragma once

#include "d3seg/tensor.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>

namespace d3seg {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recorder. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order and gradient accumulation is
/// deterministic.
class Tape {
 public:
  /// Receives the gradient and value of the node's output and accumulates into its inputs
  /// through Tape::grad_buffer.
  using Backward = std::function<void(Tape&, std::span<const double>, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable input; read its gradient with grad() after backward().
  Var leaf(Tensor value);
  /// Differentiable view of a stored parameter. backward() adds into store.grad(name).
  Var param(ParamStore& store, const std::string& name);

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }
  /// Gradient buffer of a node, zero-allocated on first use.
  std::span<double> grad_buffer(std::size_t id);
  /// Gradient after backward(); empty span when none reached the node.
  std::span<const double> grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<double> grad;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

/// Binds named parameters of a store onto a tape, once per name. Names outside
/// the trainable filter are recorded as constants.
class ParamBinding {
 public:
  using Filter = std::function<bool(std::string_view)>;

  ParamBinding(Tape& tape, ParamStore& store, Filter trainable = {});
  /// Read-only binding: every parameter is recorded as a constant.
  ParamBinding(Tape& tape, const ParamStore& store);

  Var operator()(const std::string& name);
  Tape& tape() const noexcept { return *tape_; }
  const ParamStore& store() const noexcept { return *store_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  Filter trainable_;
  std::unordered_map<std::string, Var> bound_;
};

}  // namespace d3seg
