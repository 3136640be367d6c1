#include "eta/tape.hpp"

#include "eta/error.hpp"

namespace eta::tensor {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& value, Tensor& grad_sink) {
  if (grad_sink.shape() != value.shape()) {
    throw ShapeMismatch("gradient sink " + to_string(grad_sink.shape()) +
                        " for parameter " + to_string(value.shape()));
  }
  Node n;
  n.op = "parameter";
  n.ref = &value;
  n.sink = &grad_sink;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.op = "parameter";
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NonFiniteValue(std::string("non-finite output from ") + op);
  }
  Node n;
  n.op = op;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ShapeMismatch(std::string(op) + ": inputs from another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.sink) return *n.sink;
  if (n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

const Tensor* Tape::grad_if_any(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.sink) return n.sink;
  return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::backward(Var loss, double seed) {
  if (&loss.tape() != this) throw ShapeMismatch("backward: loss from another tape");
  if (value(loss.id()).size() != 1) {
    throw ShapeMismatch("backward: loss must be scalar, got " +
                        to_string(value(loss.id()).shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad(loss.id())[0] += seed;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

}  // namespace eta::tensor
