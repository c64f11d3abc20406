#pragma once

// Reverse-mode differentiation over a recorded tape of primitive ops.
//
// Every op evaluates eagerly, appends a node holding its output and a closure
// that maps the node's output gradient onto its parents' gradients. Nodes that
// cannot reach a trainable parameter are marked constant and skipped during
// backward, so frozen parameters never receive gradient.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "fusionbert/params.hpp"
#include "fusionbert/tensor.hpp"

namespace fusionbert::ad {

struct Var {
  std::size_t id = SIZE_MAX;
  bool valid() const { return id != SIZE_MAX; }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> v) { return push(std::move(v), false, nullptr, {}); }

  Var param(ParamTensor<T>& p) {
    // Parameters may be reused many times in one graph (shared MLPs); one leaf
    // per parameter keeps backward linear in graph size.
    for (const auto& [ptr, id] : param_leaves_)
      if (ptr == &p) return Var{id};
    Var v = push(p.value, p.trainable, &p, {});
    param_leaves_.push_back({&p, v.id});
    return v;
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulated at an intermediate node by the last backward call.
  const Tensor<T>& grad(Var v) const { return node(v).grad; }

  // Records a new node. Throws NumericError if the value is not finite.
  Var record(const char* op, Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    value.require_finite(op);
    bool rg = false;
    for (auto p : parents) rg = rg || node(p).requires_grad;
    return push(std::move(value), rg, nullptr, rg ? std::move(fn) : BackwardFn{});
  }

  Var record(const char* op, Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    value.require_finite(op);
    bool rg = false;
    for (auto p : parents) rg = rg || node(p).requires_grad;
    return push(std::move(value), rg, nullptr, rg ? std::move(fn) : BackwardFn{});
  }

  // Adds g into the gradient buffer of v (no-op for constant nodes).
  void accumulate(Var v, const Tensor<T>& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    ensure_grad(n);
    auto& dst = n.grad.data();
    const auto& src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Direct access to a parent's gradient buffer for ops that scatter.
  Tensor<T>* grad_buffer(Var v) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    ensure_grad(n);
    return &n.grad;
  }

  // Propagates d(loss)/d(.) and adds it into ParamTensor::grad of every
  // trainable parameter on the path. Gradients accumulate across calls.
  void backward(Var loss) {
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size())
      throw DataError("backward: no recorded forward pass");
    auto& ln = nodes_[loss.id];
    if (ln.value.size() != 1) throw DataError("backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (!ln.requires_grad) return;
    ensure_grad(ln);
    ln.grad[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param) {
        auto& pg = n.param->grad.data();
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      } else if (n.backward) {
        n.backward(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    ParamTensor<T>* param = nullptr;
    BackwardFn backward;
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw DataError("tape: invalid variable");
    return nodes_[v.id];
  }

  static void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.dims());
  }

  Var push(Tensor<T> v, bool rg, ParamTensor<T>* p, BackwardFn fn) {
    nodes_.push_back({std::move(v), Tensor<T>(), rg, p, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<const ParamTensor<T>*, std::size_t>> param_leaves_;
};

namespace detail {

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw DataError(msg);
}

// y[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* yr = y + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += av * br[j];
    }
  }
}

// y[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      y[i * n + j] += s;
    }
  }
}

// y[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* yr = y + p * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += av * br[j];
    }
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops. Matrices are rank-2; a rank-1 tensor is a single row.

// a[m,k] @ b[k,n]
template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  detail::check(B.rows() == k, "matmul: inner extents " + dims_str(A.dims()) + " x " +
                                   dims_str(B.dims()));
  Tensor<T> y({m, n});
  detail::gemm_nn(A.data().data(), B.data().data(), y.data().data(), m, k, n);
  return t.record("matmul", std::move(y), {a, b}, [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_buffer(a))
      detail::gemm_nt(g.data().data(), t.value(b).data().data(), ga->data().data(), m, n, k);
    if (auto* gb = t.grad_buffer(b))
      detail::gemm_tn(t.value(a).data().data(), g.data().data(), gb->data().data(), m, k, n);
  });
}

// a[m,k] @ b[n,k]^T
template <typename T>
Var matmul_bt(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  detail::check(B.cols() == k, "matmul_bt: inner extents " + dims_str(A.dims()) + " x " +
                                   dims_str(B.dims()) + "^T");
  Tensor<T> y({m, n});
  detail::gemm_nt(A.data().data(), B.data().data(), y.data().data(), m, k, n);
  return t.record("matmul_bt", std::move(y), {a, b},
                  [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
                    if (auto* ga = t.grad_buffer(a))
                      detail::gemm_nn(g.data().data(), t.value(b).data().data(),
                                      ga->data().data(), m, n, k);
                    if (auto* gb = t.grad_buffer(b))
                      detail::gemm_tn(g.data().data(), t.value(a).data().data(),
                                      gb->data().data(), m, n, k);
                  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::check(A.dims() == B.dims(),
                "add: shape mismatch " + dims_str(A.dims()) + " vs " + dims_str(B.dims()));
  Tensor<T> y = A;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += B[i];
  return t.record("add", std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

// a[m,n] + row[n] broadcast over rows.
template <typename T>
Var add_row(Tape<T>& t, Var a, Var row) {
  const auto& A = t.value(a);
  const auto& R = t.value(row);
  const std::size_t n = A.cols();
  detail::check(R.size() == n, "add_row: bias length " + std::to_string(R.size()) +
                                   " does not match width " + std::to_string(n));
  Tensor<T> y = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) += R[j];
  return t.record("add_row", std::move(y), {a, row}, [a, row, n](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    if (auto* gr = t.grad_buffer(row))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) (*gr)[j] += g.at(i, j);
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Tensor<T> y = t.value(a);
  for (auto& v : y.data()) v *= s;
  return t.record("scale", std::move(y), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

// a * s where s is a one-element variable.
template <typename T>
Var scale_by(Tape<T>& t, Var a, Var s) {
  detail::check(t.value(s).size() == 1, "scale_by: scale must be a scalar");
  const T sv = t.value(s)[0];
  Tensor<T> y = t.value(a);
  for (auto& v : y.data()) v *= sv;
  return t.record("scale_by", std::move(y), {a, s}, [a, s, sv](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += sv * g[i];
    if (auto* gs = t.grad_buffer(s)) {
      const auto& A = t.value(a);
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * A[i];
      (*gs)[0] += acc;
    }
  });
}

template <typename T>
Var exp(Tape<T>& t, Var a) {
  Tensor<T> y = t.value(a);
  for (auto& v : y.data()) v = std::exp(v);
  auto yid = t.size();
  return t.record("exp", std::move(y), {a}, [a, yid](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_buffer(a)) {
      const auto& Y = t.value(Var{yid});
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * Y[i];
    }
  });
}

template <typename T>
Var gelu(Tape<T>& t, Var a) {
  Tensor<T> y = t.value(a);
  for (auto& v : y.data()) v = detail::gelu(v);
  return t.record("gelu", std::move(y), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_buffer(a)) {
      const auto& X = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * detail::gelu_grad(X[i]);
    }
  });
}

// Row-wise layer normalization with affine gamma/beta.
template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps) {
  const auto& X = t.value(x);
  const std::size_t d = X.cols(), m = X.rows();
  if (d < 2) throw DataError("layer_norm: width must be >= 2");
  if (!(eps >= T(0))) throw DataError("layer_norm: eps must be non-negative");
  detail::check(t.value(gamma).size() == d && t.value(beta).size() == d,
                "layer_norm: gamma/beta length mismatch");
  const auto& G = t.value(gamma);
  const auto& Bt = t.value(beta);
  Tensor<T> y({m, d});
  Tensor<T> xhat({m, d});
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = X.row(i);
    T mean = 0;
    for (auto v : r) mean += v;
    mean /= T(d);
    T var = 0;
    for (auto v : r) var += (v - mean) * (v - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    if (!std::isfinite(is)) throw NumericError("layer_norm: zero variance with eps=0");
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (r[j] - mean) * is;
      y.at(i, j) = G[j] * xhat.at(i, j) + Bt[j];
    }
  }
  if (X.rank() == 1) y = Tensor<T>({d}, std::move(y.data()));
  return t.record(
      "layer_norm", std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m, d](
          Tape<T>& t, const Tensor<T>& g) {
        const auto& G = t.value(gamma);
        if (auto* gg = t.grad_buffer(gamma))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[i * d + j] * xhat.at(i, j);
        if (auto* gb = t.grad_buffer(beta))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[i * d + j];
        if (auto* gx = t.grad_buffer(x)) {
          std::vector<T> dxh(d);
          for (std::size_t i = 0; i < m; ++i) {
            T mean_dxh = 0, mean_dxh_xh = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dxh[j] = g[i * d + j] * G[j];
              mean_dxh += dxh[j];
              mean_dxh_xh += dxh[j] * xhat.at(i, j);
            }
            mean_dxh /= T(d);
            mean_dxh_xh /= T(d);
            for (std::size_t j = 0; j < d; ++j)
              (*gx)[i * d + j] += inv_std[i] * (dxh[j] - mean_dxh - xhat.at(i, j) * mean_dxh_xh);
          }
        }
      });
}

// Row-wise softmax with max subtraction.
template <typename T>
Var softmax_rows(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  Tensor<T> y = X;
  const std::size_t n = X.cols();
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto r = y.row(i);
    T mx = r[0];
    for (auto v : r) mx = std::max(mx, v);
    T s = 0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    for (auto& v : r) v /= s;
  }
  auto yid = t.size();
  return t.record("softmax", std::move(y), {x}, [x, yid, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const auto& Y = t.value(Var{yid});
      for (std::size_t i = 0; i < Y.rows(); ++i) {
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += Y[i * n + j] * (g[i * n + j] - s);
      }
    }
  });
}

// Row-wise x / ||x||_2. A zero row is a NumericError.
template <typename T>
Var l2_normalize_rows(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  const std::size_t n = X.cols();
  Tensor<T> y = X;
  std::vector<T> norms(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto r = y.row(i);
    T s = 0;
    for (auto v : r) s += v * v;
    norms[i] = std::sqrt(s);
    if (!(norms[i] > T(0))) throw NumericError("l2_normalize: zero vector");
    for (auto& v : r) v /= norms[i];
  }
  auto yid = t.size();
  return t.record("l2_normalize", std::move(y), {x},
                  [x, yid, n, norms = std::move(norms)](Tape<T>& t, const Tensor<T>& g) {
                    if (auto* gx = t.grad_buffer(x)) {
                      const auto& Y = t.value(Var{yid});
                      for (std::size_t i = 0; i < Y.rows(); ++i) {
                        T d = 0;
                        for (std::size_t j = 0; j < n; ++j) d += Y[i * n + j] * g[i * n + j];
                        for (std::size_t j = 0; j < n; ++j)
                          (*gx)[i * n + j] += (g[i * n + j] - Y[i * n + j] * d) / norms[i];
                      }
                    }
                  });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var x, std::size_t start, std::size_t len) {
  const auto& X = t.value(x);
  const std::size_t n = X.cols(), m = X.rows();
  detail::check(start + len <= n && len > 0, "slice_cols: out of range");
  Tensor<T> y({m, len});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < len; ++j) y.at(i, j) = X.at(i, start + j);
  return t.record("slice_cols", std::move(y), {x},
                  [x, start, len, n, m](Tape<T>& t, const Tensor<T>& g) {
                    if (auto* gx = t.grad_buffer(x))
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < len; ++j) (*gx)[i * n + start + j] += g[i * len + j];
                  });
}

template <typename T>
Var concat_cols(Tape<T>& t, const std::vector<Var>& parts) {
  detail::check(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = t.value(parts[0]).rows();
  std::size_t n = 0;
  for (auto p : parts) {
    detail::check(t.value(p).rows() == m, "concat_cols: row count mismatch");
    n += t.value(p).cols();
  }
  Tensor<T> y({m, n});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& P = t.value(p);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) y.at(i, off + j) = P.at(i, j);
    off += P.cols();
  }
  return t.record("concat_cols", std::move(y), parts, [parts, m, n](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t w = t.value(p).cols();
      if (auto* gp = t.grad_buffer(p))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += g[i * n + off + j];
      off += w;
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& t, const std::vector<Var>& parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = t.value(parts[0]).cols();
  std::size_t m = 0;
  for (auto p : parts) {
    detail::check(t.value(p).cols() == n, "concat_rows: width mismatch");
    m += t.value(p).rows();
  }
  std::vector<T> data;
  data.reserve(m * n);
  for (auto p : parts) data.insert(data.end(), t.value(p).data().begin(), t.value(p).data().end());
  return t.record("concat_rows", Tensor<T>({m, n}, std::move(data)), parts,
                  [parts](Tape<T>& t, const Tensor<T>& g) {
                    std::size_t off = 0;
                    for (auto p : parts) {
                      const std::size_t sz = t.value(p).size();
                      if (auto* gp = t.grad_buffer(p))
                        for (std::size_t k = 0; k < sz; ++k) (*gp)[k] += g[off + k];
                      off += sz;
                    }
                  });
}

template <typename T>
Var select_rows(Tape<T>& t, Var x, std::vector<std::size_t> idx) {
  const auto& X = t.value(x);
  const std::size_t n = X.cols();
  Tensor<T> y({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::check(idx[i] < X.rows(), "select_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) = X.at(idx[i], j);
  }
  return t.record("select_rows", std::move(y), {x},
                  [x, n, idx = std::move(idx)](Tape<T>& t, const Tensor<T>& g) {
                    if (auto* gx = t.grad_buffer(x))
                      for (std::size_t i = 0; i < idx.size(); ++i)
                        for (std::size_t j = 0; j < n; ++j) (*gx)[idx[i] * n + j] += g[i * n + j];
                  });
}

template <typename T>
Var transpose(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  const std::size_t m = X.rows(), n = X.cols();
  Tensor<T> y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(j, i) = X.at(i, j);
  return t.record("transpose", std::move(y), {x}, [x, m, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += g[j * m + i];
  });
}

// Column-wise mean over rows -> [1, n].
template <typename T>
Var mean_rows(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  const std::size_t m = X.rows(), n = X.cols();
  Tensor<T> y({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j] += X.at(i, j);
  for (auto& v : y.data()) v /= T(m);
  return t.record("mean_rows", std::move(y), {x}, [x, m, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += g[j] / T(m);
  });
}

// Max over consecutive blocks of `group` rows: [G*group, n] -> [G, n].
// Gradient is routed to the first row attaining the maximum.
template <typename T>
Var group_max(Tape<T>& t, Var x, std::size_t group) {
  const auto& X = t.value(x);
  const std::size_t n = X.cols();
  detail::check(group > 0 && X.rows() % group == 0, "group_max: rows not divisible by group");
  const std::size_t G = X.rows() / group;
  Tensor<T> y({G, n});
  std::vector<std::size_t> arg(G * n);
  for (std::size_t b = 0; b < G; ++b)
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = b * group;
      for (std::size_t r = b * group + 1; r < (b + 1) * group; ++r)
        if (X.at(r, j) > X.at(best, j)) best = r;
      y.at(b, j) = X.at(best, j);
      arg[b * n + j] = best;
    }
  return t.record("group_max", std::move(y), {x}, [x, n, arg = std::move(arg)](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_buffer(x))
      for (std::size_t k = 0; k < arg.size(); ++k) (*gx)[arg[k] * n + k % n] += g[k];
  });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  T s = 0;
  for (auto v : t.value(x).data()) s += v;
  return t.record("sum", Tensor<T>({1}, std::vector<T>{s}), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_buffer(x))
      for (auto& v : gx->data()) v += g[0];
  });
}

// Weighted sum of scalars: sum_i w_i * s_i.
template <typename T>
Var weighted_sum(Tape<T>& t, const std::vector<Var>& scalars, std::vector<T> weights) {
  detail::check(scalars.size() == weights.size() && !scalars.empty(), "weighted_sum: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    detail::check(t.value(scalars[i]).size() == 1, "weighted_sum: inputs must be scalars");
    s += weights[i] * t.value(scalars[i])[0];
  }
  return t.record("weighted_sum", Tensor<T>({1}, std::vector<T>{s}), scalars,
                  [scalars, weights = std::move(weights)](Tape<T>& t, const Tensor<T>& g) {
                    for (std::size_t i = 0; i < scalars.size(); ++i)
                      if (auto* gs = t.grad_buffer(scalars[i])) (*gs)[0] += weights[i] * g[0];
                  });
}

// mean_i -log softmax(logits[i,:])[i] for a square logit matrix.
template <typename T>
Var cross_entropy_diag(Tape<T>& t, Var logits) {
  const auto& L = t.value(logits);
  const std::size_t b = L.rows();
  detail::check(L.cols() == b && L.rank() == 2, "cross_entropy_diag: logits must be square");
  Tensor<T> prob({b, b});
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    auto r = L.row(i);
    T mx = r[0];
    for (auto v : r) mx = std::max(mx, v);
    T s = 0;
    for (auto v : r) s += std::exp(v - mx);
    const T lse = mx + std::log(s);
    loss += lse - r[i];
    for (std::size_t j = 0; j < b; ++j) prob.at(i, j) = std::exp(r[j] - lse);
  }
  loss /= T(b);
  return t.record("cross_entropy_diag", Tensor<T>({1}, std::vector<T>{loss}), {logits},
                  [logits, b, prob = std::move(prob)](Tape<T>& t, const Tensor<T>& g) {
                    if (auto* gl = t.grad_buffer(logits))
                      for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < b; ++j)
                          (*gl)[i * b + j] += g[0] * (prob.at(i, j) - (i == j ? T(1) : T(0))) / T(b);
                  });
}

}  // namespace fusionbert::ad
