#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "eta/tensor.hpp"

namespace eta::tensor {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode record of primitive ops. Nodes are appended in execution
/// order, so reverse insertion order is a valid topological order for the
/// backward sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf with its own gradient buffer, readable through grad().
  Var variable(Tensor value);
  /// Leaf that reads `value` in place and accumulates its gradient into
  /// `grad_sink`. Both must outlive the tape.
  Var parameter(const Tensor& value, Tensor& grad_sink);
  /// Parameter without gradient tracking (inference).
  Var parameter(const Tensor& value);

  /// Records an op result. Throws NonFiniteValue if `value` holds NaN/Inf.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  /// Seeds d(loss)/d(loss) = seed and sweeps every node once in reverse.
  void backward(Var loss, double seed = 1.0);

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::uint32_t id);
  /// Gradient if one has been accumulated, else nullptr.
  const Tensor* grad_if_any(std::uint32_t id) const;

  const Tensor& grad(Var v) { return grad(v.id()); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    Tensor* sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace eta::tensor
