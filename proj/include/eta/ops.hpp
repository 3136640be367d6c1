#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eta/tape.hpp"

namespace eta::tensor {

// Differentiable primitives. Matrices are rank-2 row-major; a "row" operand
// is any tensor whose element count equals the matrix column count.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var matrix, Var row);
Var exp(Var a);
Var relu(Var a);
Var softplus(Var a);
Var sum(Var a);

/// Embedding lookup: out[i] = table[rows[i]]. The backward pass scatters
/// into the looked-up rows only.
Var gather(Var table, std::vector<std::uint32_t> rows);

/// Window-3 convolution along the sequence axis with one zero row of padding
/// at each end. x: [m x c_in], kernel: [3 x c_in x c_out], bias: [c_out].
/// Kernel slice 0 multiplies the previous position, slice 1 the current one.
Var conv1d(Var x, Var kernel, Var bias);

/// Compressed neighbor lists: the neighbors of node i are
/// indices[offsets[i] .. offsets[i+1]).
struct Adjacency {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;

  std::size_t nodes() const { return offsets.size() - 1; }
  std::size_t edges() const { return indices.size(); }
  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {indices.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
  void add_node(std::span<const std::uint32_t> nbrs);
};

/// Per-head normalized exponential attention weights for one query row.
/// Writes weights for each neighbor of node `i` and head into
/// `alpha[h * deg + j]`. Logits are q.k / sqrt(head_dim), shifted by the
/// per-head maximum before exponentiation.
void attention_weights(const Tensor& q, const Tensor& k, const Adjacency& adj,
                       std::size_t i, std::size_t heads, std::span<double> alpha);

/// Multi-head neighborhood attention. q, k, v: [n x D] with D = heads * d.
/// Head c reads and writes columns [c*d, (c+1)*d). Row i of the output is
/// sum_j alpha_{c,i,j} v_j restricted to each head's slice; nodes without
/// neighbors produce zeros.
Var graph_attention(Var q, Var k, Var v, const Adjacency& adj, std::size_t heads);

double huber(double error, double delta);
double huber_derivative(double error, double delta);

/// Mean Huber loss of pred (any shape with m entries) against `target`.
Var huber_mean(Var pred, std::span<const double> target, double delta);

/// Absolute percentage error |total - label| / label of a scalar.
Var ape(Var total, double label);

}  // namespace eta::tensor
