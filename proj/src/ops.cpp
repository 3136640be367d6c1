#include "eta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eta/error.hpp"

namespace eta::tensor {
namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeMismatch(std::string(op) + ": " + detail);
}

bool is_matrix(const Tensor& t) { return t.rank() == 2; }

// C[n x m] += A[n x k] * B[k x m]
[[gnu::target_clones("avx2", "default")]] void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[n x k] += A[n x m] * B[k x m]^T. B is transposed once so the inner loop
// runs over contiguous memory.
[[gnu::target_clones("avx2", "default")]] void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k) {
  thread_local std::vector<double> bt;
  bt.resize(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  gemm_nn(a, bt.data(), c, n, m, k);
}

// C[k x m] += A[n x k]^T * B[n x m]
[[gnu::target_clones("avx2", "default")]] void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <class Fwd, class Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::uint32_t ia = a.id();
  return a.tape().record(op, std::move(out), {a}, [ia, deriv](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (!t.requires_grad(ia)) return;
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

void require_same(const char* op, Var a, Var b) {
  require(a.value().shape() == b.value().shape(), op,
          to_string(a.value().shape()) + " vs " + to_string(b.value().shape()));
}

}  // namespace

void Adjacency::add_node(std::span<const std::uint32_t> nbrs) {
  indices.insert(indices.end(), nbrs.begin(), nbrs.end());
  offsets.push_back(static_cast<std::uint32_t>(indices.size()));
}

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require(is_matrix(x) && is_matrix(w) && x.shape()[1] == w.shape()[0], "matmul",
          to_string(x.shape()) + " * " + to_string(w.shape()));
  const std::size_t n = x.shape()[0], k = x.shape()[1], m = w.shape()[1];
  Tensor out({n, m});
  gemm_nn(x.data(), w.data(), out.data(), n, k, m);
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b},
                         [ia, ib, n, k, m](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             gemm_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), n, m, k);
                           }
                           if (t.requires_grad(ib)) {
                             gemm_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), n, k, m);
                           }
                         });
}

Var add(Var a, Var b) {
  require_same("add", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::uint32_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      Tensor& gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same("div", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.tape().record("div", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / y[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * x[i] / (y[i] * y[i]);
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_row(Var matrix, Var row) {
  const Tensor& x = matrix.value();
  const Tensor& r = row.value();
  require(is_matrix(x) && r.size() == x.shape()[1], "add_row",
          to_string(x.shape()) + " + " + to_string(r.shape()));
  Tensor out = x;
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += r[j];
  const std::uint32_t ia = matrix.id(), ib = row.id();
  return matrix.tape().record("add_row", std::move(out), {matrix, row},
                              [ia, ib, n, m](Tape& t, std::uint32_t self) {
                                const Tensor& g = t.grad(self);
                                if (t.requires_grad(ia)) {
                                  Tensor& ga = t.grad(ia);
                                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                }
                                if (t.requires_grad(ib)) {
                                  Tensor& gb = t.grad(ib);
                                  for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
                                }
                              });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        // logistic sigmoid, evaluated on the stable side
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::uint32_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {a}, [ia](Tape& t, std::uint32_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var gather(Var table, std::vector<std::uint32_t> rows) {
  const Tensor& tab = table.value();
  require(is_matrix(tab), "gather", "table must be a matrix, got " + to_string(tab.shape()));
  const std::size_t n = rows.size(), d = tab.shape()[1];
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    require(rows[i] < tab.shape()[0], "gather",
            "row " + std::to_string(rows[i]) + " out of " + std::to_string(tab.shape()[0]));
    std::copy_n(tab.data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::uint32_t ia = table.id();
  return table.tape().record("gather", std::move(out), {table},
                             [ia, rows = std::move(rows), d](Tape& t, std::uint32_t self) {
                               if (!t.requires_grad(ia)) return;
                               const Tensor& g = t.grad(self);
                               Tensor& gt = t.grad(ia);
                               for (std::size_t i = 0; i < rows.size(); ++i) {
                                 double* dst = gt.data() + rows[i] * d;
                                 const double* src = g.data() + i * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                               }
                             });
}

Var conv1d(Var x, Var kernel, Var bias) {
  const Tensor& in = x.value();
  const Tensor& w = kernel.value();
  const Tensor& b = bias.value();
  require(is_matrix(in) && w.rank() == 3 && w.shape()[0] == 3 && w.shape()[1] == in.shape()[1] &&
              b.size() == w.shape()[2],
          "conv1d",
          to_string(in.shape()) + " with kernel " + to_string(w.shape()) + " bias " +
              to_string(b.shape()));
  const std::size_t m = in.shape()[0], ci = in.shape()[1], co = w.shape()[2];
  Tensor out({m, co});
  for (std::size_t t = 0; t < m; ++t) {
    double* o = out.data() + t * co;
    std::copy_n(b.data(), co, o);
    for (std::size_t tap = 0; tap < 3; ++tap) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) - 1;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
      gemm_nn(in.data() + src * ci, w.data() + tap * ci * co, o, 1, ci, co);
    }
  }
  const std::uint32_t ix = x.id(), iw = kernel.id(), ib = bias.id();
  return x.tape().record(
      "conv1d", std::move(out), {x, kernel, bias},
      [ix, iw, ib, m, ci, co](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& in = t.value(ix);
        const Tensor& w = t.value(iw);
        for (std::size_t pos = 0; pos < m; ++pos) {
          const double* go = g.data() + pos * co;
          for (std::size_t tap = 0; tap < 3; ++tap) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(pos + tap) - 1;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
            if (t.requires_grad(ix)) {
              gemm_nt(go, w.data() + tap * ci * co, t.grad(ix).data() + src * ci, 1, co, ci);
            }
            if (t.requires_grad(iw)) {
              gemm_tn(in.data() + src * ci, go, t.grad(iw).data() + tap * ci * co, 1, ci, co);
            }
          }
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (std::size_t pos = 0; pos < m; ++pos)
            for (std::size_t j = 0; j < co; ++j) gb[j] += g[pos * co + j];
        }
      });
}

void attention_weights(const Tensor& q, const Tensor& k, const Adjacency& adj, std::size_t i,
                       std::size_t heads, std::span<double> alpha) {
  const std::size_t width = q.shape()[1];
  const std::size_t d = width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const auto nbrs = adj.neighbors(i);
  const std::size_t deg = nbrs.size();
  const double* qi = q.data() + i * width;
  for (std::size_t c = 0; c < heads; ++c) {
    double* a = alpha.data() + c * deg;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < deg; ++j) {
      const double* kj = k.data() + nbrs[j] * width + c * d;
      double s = 0.0;
      for (std::size_t e = 0; e < d; ++e) s += qi[c * d + e] * kj[e];
      a[j] = s * inv_sqrt_d;
      max_logit = std::max(max_logit, a[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < deg; ++j) {
      a[j] = std::exp(a[j] - max_logit);
      z += a[j];
    }
    for (std::size_t j = 0; j < deg; ++j) a[j] /= z;
  }
}

Var graph_attention(Var q, Var k, Var v, const Adjacency& adj, std::size_t heads) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require(is_matrix(qv) && qv.shape() == kv.shape() && qv.shape() == vv.shape(),
          "graph_attention",
          to_string(qv.shape()) + ", " + to_string(kv.shape()) + ", " + to_string(vv.shape()));
  const std::size_t n = qv.shape()[0], width = qv.shape()[1];
  require(heads > 0 && width % heads == 0, "graph_attention",
          std::to_string(heads) + " heads for width " + std::to_string(width));
  require(adj.nodes() == n, "graph_attention",
          "adjacency has " + std::to_string(adj.nodes()) + " nodes, features " +
              std::to_string(n));
  const std::size_t d = width / heads;

  // alpha[offsets[i] * heads + c * deg + j]
  std::vector<double> alpha(adj.edges() * heads);
  Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = adj.neighbors(i);
    const std::size_t deg = nbrs.size();
    if (deg == 0) continue;
    std::span<double> a(alpha.data() + adj.offsets[i] * heads, deg * heads);
    attention_weights(qv, kv, adj, i, heads, a);
    for (std::size_t c = 0; c < heads; ++c) {
      double* o = out.data() + i * width + c * d;
      for (std::size_t j = 0; j < deg; ++j) {
        const double w = a[c * deg + j];
        const double* vj = vv.data() + nbrs[j] * width + c * d;
        for (std::size_t e = 0; e < d; ++e) o[e] += w * vj[e];
      }
    }
  }

  const std::uint32_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(
      "graph_attention", std::move(out), {q, k, v},
      [iq, ik, iv, &adj, heads, n, width, d, alpha = std::move(alpha)](Tape& t,
                                                                         std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik),
                   need_v = t.requires_grad(iv);
        Tensor* gq = need_q ? &t.grad(iq) : nullptr;
        Tensor* gk = need_k ? &t.grad(ik) : nullptr;
        Tensor* gv = need_v ? &t.grad(iv) : nullptr;
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> dlogit;
        for (std::size_t i = 0; i < n; ++i) {
          const auto nbrs = adj.neighbors(i);
          const std::size_t deg = nbrs.size();
          if (deg == 0) continue;
          dlogit.assign(deg, 0.0);
          const double* a_all = alpha.data() + adj.offsets[i] * heads;
          for (std::size_t c = 0; c < heads; ++c) {
            const double* a = a_all + c * deg;
            const double* gi = g.data() + i * width + c * d;
            // d(out)/d(alpha_j) = g . v_j
            double weighted = 0.0;
            for (std::size_t j = 0; j < deg; ++j) {
              const double* vj = vv.data() + nbrs[j] * width + c * d;
              double s = 0.0;
              for (std::size_t e = 0; e < d; ++e) s += gi[e] * vj[e];
              dlogit[j] = s;
              weighted += a[j] * s;
              if (gv) {
                double* gvj = gv->data() + nbrs[j] * width + c * d;
                for (std::size_t e = 0; e < d; ++e) gvj[e] += a[j] * gi[e];
              }
            }
            for (std::size_t j = 0; j < deg; ++j) {
              const double ds = a[j] * (dlogit[j] - weighted) * inv_sqrt_d;
              if (ds == 0.0) continue;
              const double* kj = kv.data() + nbrs[j] * width + c * d;
              const double* qi = qv.data() + i * width + c * d;
              if (gq) {
                double* gqi = gq->data() + i * width + c * d;
                for (std::size_t e = 0; e < d; ++e) gqi[e] += ds * kj[e];
              }
              if (gk) {
                double* gkj = gk->data() + nbrs[j] * width + c * d;
                for (std::size_t e = 0; e < d; ++e) gkj[e] += ds * qi[e];
              }
            }
          }
        }
      });
}

double huber(double error, double delta) {
  const double a = std::abs(error);
  return a < delta ? 0.5 * error * error : delta * (a - 0.5 * delta);
}

double huber_derivative(double error, double delta) {
  if (std::abs(error) < delta) return error;
  return error > 0.0 ? delta : -delta;
}

Var huber_mean(Var pred, std::span<const double> target, double delta) {
  const Tensor& p = pred.value();
  require(p.size() == target.size() && !target.empty(), "huber_mean",
          std::to_string(p.size()) + " predictions for " + std::to_string(target.size()) +
              " targets");
  if (!(delta > 0.0)) throw NumericError("huber_mean: delta must be positive");
  const double inv_m = 1.0 / static_cast<double>(p.size());
  double s = 0.0;
  std::vector<double> deriv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - target[i];
    s += huber(e, delta);
    deriv[i] = huber_derivative(e, delta) * inv_m;
  }
  const std::uint32_t ia = pred.id();
  return pred.tape().record("huber_mean", Tensor::scalar(s * inv_m), {pred},
                            [ia, deriv = std::move(deriv)](Tape& t, std::uint32_t self) {
                              if (!t.requires_grad(ia)) return;
                              const double g = t.grad(self)[0];
                              Tensor& ga = t.grad(ia);
                              for (std::size_t i = 0; i < deriv.size(); ++i)
                                ga[i] += g * deriv[i];
                            });
}

Var ape(Var total, double label) {
  const Tensor& p = total.value();
  require(p.size() == 1, "ape", "expects a scalar, got " + to_string(p.shape()));
  if (!(label > 0.0)) throw NonPositiveLabel("ape: label must be positive");
  const double e = p[0] - label;
  const double slope = (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) / label;
  const std::uint32_t ia = total.id();
  return total.tape().record("ape", Tensor::scalar(std::abs(e) / label), {total},
                             [ia, slope](Tape& t, std::uint32_t self) {
                               if (!t.requires_grad(ia)) return;
                               t.grad(ia)[0] += t.grad(self)[0] * slope;
                             });
}

}  // namespace eta::tensor
