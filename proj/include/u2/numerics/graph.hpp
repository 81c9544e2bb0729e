// Copyright 2026 The U2 Desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Tape-based reverse-mode differentiation over matrix-valued nodes.
//
// A Graph records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep that visits
// each node once. Parameters enter as leaves that alias the caller's
// Tensor; their gradients accumulate straight into Tensor::grad().

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "u2/masking.hpp"
#include "u2/numerics/tensor.hpp"

namespace u2 {

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value()[0]; }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor&, std::span<const double>)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, false, {}});
    return {this, nodes_.size() - 1};
  }

  /// Leaf aliasing `p`. Gradients flow into p.grad() when p requires grad.
  Var param(Tensor& p) {
    nodes_.push_back(Node{{}, &p, {}, grad_enabled_ && p.requires_grad(), {}});
    return {this, nodes_.size() - 1};
  }

  /// Appends an operation node. `fn` is kept only when some input needs
  /// a gradient and the graph is recording.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) {
        assert(v.graph == this);
        needs = needs || nodes_[v.id].needs_grad;
      }
    }
    nodes_.push_back(Node{std::move(value), nullptr, {}, needs, needs ? std::move(fn) : Backward{}});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? *n.param : n.value;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient accumulator for `v`; empty when v needs none.
  std::span<double> grad_of(Var v) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return {};
    if (n.param) return n.param->grad();
    if (n.grad.empty()) n.grad.assign(value(v.id).size(), 0.0);
    return n.grad;
  }

  /// Seeds d(root)/d(root) = 1 for a single-element root and sweeps back.
  void backward(Var root) {
    if (value(root.id).size() != 1) throw Error("backward needs a scalar root");
    if (!nodes_[root.id].needs_grad) return;
    grad_of(root)[0] += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.value, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor* param;
    std::vector<double> grad;
    bool needs_grad;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_mat(const Tensor& t) {
  return {t.storage().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline ConstMatMap as_mat(std::span<const double> d, std::size_t r, std::size_t c) {
  return {d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
inline MatMap as_mat(std::span<double> d, std::size_t r, std::size_t c) {
  return {d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

inline void require(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw Error(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a (m x k) * b (k x n)
inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix(A, "matmul");
  detail::require_matrix(B, "matmul");
  detail::require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  Tensor out = Tensor::matrix(A.rows(), B.cols());
  detail::as_mat(out.data(), out.rows(), out.cols()).noalias() = detail::as_mat(A) * detail::as_mat(B);
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, std::span<const double> dy) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    auto dY = detail::as_mat(dy, A.rows(), B.cols());
    if (auto da = g.grad_of(a); !da.empty()) {
      detail::as_mat(da, A.rows(), A.cols()).noalias() += dY * detail::as_mat(B).transpose();
    }
    if (auto db = g.grad_of(b); !db.empty()) {
      detail::as_mat(db, B.rows(), B.cols()).noalias() += detail::as_mat(A).transpose() * dY;
    }
  });
}

/// a (m x k) * b^T where b is (n x k)
inline Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix(A, "matmul_nt");
  detail::require_matrix(B, "matmul_nt");
  detail::require(A.cols() == B.cols(), "matmul_nt: inner dimensions differ");
  Tensor out = Tensor::matrix(A.rows(), B.rows());
  detail::as_mat(out.data(), out.rows(), out.cols()).noalias() =
      detail::as_mat(A) * detail::as_mat(B).transpose();
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, std::span<const double> dy) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    auto dY = detail::as_mat(dy, A.rows(), B.rows());
    if (auto da = g.grad_of(a); !da.empty()) {
      detail::as_mat(da, A.rows(), A.cols()).noalias() += dY * detail::as_mat(B);
    }
    if (auto db = g.grad_of(b); !db.empty()) {
      detail::as_mat(db, B.rows(), B.cols()).noalias() += dY.transpose() * detail::as_mat(A);
    }
  });
}

/// x (m x in) * w (in x out) + bias (out)
inline Var linear(Var x, Var w, Var bias) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = bias.value();
  detail::require_matrix(X, "linear");
  detail::require(X.cols() == W.rows() && B.size() == W.cols(), "linear: shape mismatch");
  Tensor out = Tensor::matrix(X.rows(), W.cols());
  auto Y = detail::as_mat(out.data(), out.rows(), out.cols());
  Y.noalias() = detail::as_mat(X) * detail::as_mat(W);
  Y.rowwise() += detail::as_mat(B.data(), 1, B.size()).row(0);
  return x.graph->record(std::move(out), {x, w, bias}, [x, w, bias](Graph& g, const Tensor&, std::span<const double> dy) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    auto dY = detail::as_mat(dy, X.rows(), W.cols());
    if (auto dx = g.grad_of(x); !dx.empty()) {
      detail::as_mat(dx, X.rows(), X.cols()).noalias() += dY * detail::as_mat(W).transpose();
    }
    if (auto dw = g.grad_of(w); !dw.empty()) {
      detail::as_mat(dw, W.rows(), W.cols()).noalias() += detail::as_mat(X).transpose() * dY;
    }
    if (auto db = g.grad_of(bias); !db.empty()) {
      detail::as_mat(db, 1, W.cols()) += dY.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  const Tensor& A = a.value();
  detail::require(A.same_shape(b.value()), "add: shape mismatch");
  Tensor out = A;
  out.drop_grad();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, std::span<const double> dy) {
    for (Var v : {a, b}) {
      if (auto d = g.grad_of(v); !d.empty()) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
      }
    }
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& A = a.value();
  detail::require(A.same_shape(b.value()), "sub: shape mismatch");
  Tensor out(A.shape());
  const auto ad = A.data();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, std::span<const double> dy) {
    if (auto d = g.grad_of(a); !d.empty()) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (auto d = g.grad_of(b); !d.empty()) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  const Tensor& A = a.value();
  detail::require(A.same_shape(b.value()), "mul: shape mismatch");
  Tensor out(A.shape());
  const auto ad = A.data();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, std::span<const double> dy) {
    const auto ad = a.value().data();
    const auto bd = b.value().data();
    if (auto d = g.grad_of(a); !d.empty()) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * bd[i];
    }
    if (auto d = g.grad_of(b); !d.empty()) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * ad[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out(a.value().shape());
  const auto ad = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  return a.graph->record(std::move(out), {a}, [a, s](Graph& g, const Tensor&, std::span<const double> dy) {
    auto d = g.grad_of(a);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * s;
  });
}

inline Var relu(Var a) {
  Tensor out(a.value().shape());
  const auto ad = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Tensor&, std::span<const double> dy) {
    const auto ad = a.value().data();
    auto d = g.grad_of(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (ad[i] > 0.0) d[i] += dy[i];
    }
  });
}

inline Var sigmoid(Var a) {
  Tensor out(a.value().shape());
  const auto ad = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ad[i]));
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Tensor& y, std::span<const double> dy) {
    auto d = g.grad_of(a);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

/// Sum of all elements as a 1-element tensor.
inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph->record(Tensor::scalar(s), {a}, [a](Graph& g, const Tensor&, std::span<const double> dy) {
    auto d = g.grad_of(a);
    for (double& v : d) v += dy[0];
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalization

inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Tensor& X = x.value();
  detail::require_matrix(X, "layer_norm");
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  detail::require(gamma.value().size() == d && beta.value().size() == d, "layer_norm: parameter size");
  Tensor out = Tensor::matrix(n, d);
  const auto gd = gamma.value().data();
  const auto bd = beta.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    const auto xr = X.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto yr = out.row(r);
    for (std::size_t c = 0; c < d; ++c) yr[c] = (xr[c] - mean) * inv * gd[c] + bd[c];
  }
  return x.graph->record(std::move(out), {x, gamma, beta}, [x, gamma, beta, eps](Graph& g, const Tensor&, std::span<const double> dy) {
    const Tensor& X = x.value();
    const std::size_t n = X.rows();
    const std::size_t d = X.cols();
    const auto gd = gamma.value().data();
    auto dx = g.grad_of(x);
    auto dg = g.grad_of(gamma);
    auto db = g.grad_of(beta);
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < n; ++r) {
      const auto xr = X.row(r);
      double mean = 0.0;
      for (double v : xr) mean += v;
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (double v : xr) var += (v - mean) * (v - mean);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        xhat[c] = (xr[c] - mean) * inv;
        const double gy = dy[r * d + c];
        dxhat[c] = gy * gd[c];
        m1 += dxhat[c];
        m2 += dxhat[c] * xhat[c];
        if (!dg.empty()) dg[c] += gy * xhat[c];
        if (!db.empty()) db[c] += gy;
      }
      if (dx.empty()) continue;
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += inv * (dxhat[c] - m1 - xhat[c] * m2);
    }
  });
}

/// Row-wise softmax restricted to mask-visible positions. Hidden entries
/// are exactly zero.
inline Var masked_softmax(Var logits, const AttentionMask& mask) {
  const Tensor& X = logits.value();
  detail::require_matrix(X, "masked_softmax");
  if (mask.rows() != X.rows() || mask.cols() != X.cols()) {
    throw Error("mask shape does not match logits");
  }
  const std::size_t n = X.rows();
  const std::size_t m = X.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    double hi = kNegInf;
    for (std::size_t c = 0; c < m; ++c) {
      if (mask(r, c)) hi = std::max(hi, X(r, c));
    }
    if (hi == kNegInf) throw Error("unattendable position");
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (mask(r, c)) {
        out(r, c) = std::exp(X(r, c) - hi);
        z += out(r, c);
      }
    }
    for (std::size_t c = 0; c < m; ++c) out(r, c) /= z;
  }
  return logits.graph->record(std::move(out), {logits}, [logits](Graph& g, const Tensor& p, std::span<const double> dy) {
    auto dx = g.grad_of(logits);
    const std::size_t m = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += p(r, c) * dy[r * m + c];
      for (std::size_t c = 0; c < m; ++c) dx[r * m + c] += p(r, c) * (dy[r * m + c] - dot);
    }
  });
}

inline Var log_softmax(Var logits) {
  const Tensor& X = logits.value();
  detail::require_matrix(X, "log_softmax");
  Tensor out = Tensor::matrix(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const double lse = logsumexp(X.row(r));
    auto yr = out.row(r);
    const auto xr = X.row(r);
    for (std::size_t c = 0; c < X.cols(); ++c) yr[c] = xr[c] - lse;
  }
  return logits.graph->record(std::move(out), {logits}, [logits](Graph& g, const Tensor& y, std::span<const double> dy) {
    auto dx = g.grad_of(logits);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < m; ++c) total += dy[r * m + c];
      for (std::size_t c = 0; c < m; ++c) dx[r * m + c] += dy[r * m + c] - std::exp(y(r, c)) * total;
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Rows of `table` selected by `ids`.
inline Var embedding(Var table, std::vector<int> ids) {
  const Tensor& W = table.value();
  detail::require_matrix(W, "embedding");
  Tensor out = Tensor::matrix(ids.size(), W.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows()) throw Error("embedding index out of range");
    std::copy_n(W.row(static_cast<std::size_t>(ids[i])).begin(), W.cols(), out.row(i).begin());
  }
  return table.graph->record(std::move(out), {table}, [table, ids = std::move(ids)](Graph& g, const Tensor&, std::span<const double> dy) {
    auto dw = g.grad_of(table);
    const std::size_t d = table.value().cols();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t c = 0; c < d; ++c) dw[base + c] += dy[i * d + c];
    }
  });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t width) {
  const Tensor& X = x.value();
  detail::require_matrix(X, "slice_cols");
  detail::require(begin + width <= X.cols(), "slice_cols: out of range");
  Tensor out = Tensor::matrix(X.rows(), width);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::copy_n(X.row(r).begin() + static_cast<std::ptrdiff_t>(begin), width, out.row(r).begin());
  }
  return x.graph->record(std::move(out), {x}, [x, begin, width](Graph& g, const Tensor&, std::span<const double> dy) {
    auto dx = g.grad_of(x);
    const std::size_t m = x.value().cols();
    for (std::size_t r = 0; r < x.value().rows(); ++r) {
      for (std::size_t c = 0; c < width; ++c) dx[r * m + begin + c] += dy[r * width + c];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: nothing to concatenate");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require(p.value().rank() == 2 && p.rows() == n, "concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(P.row(r).begin(), P.cols(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += P.cols();
  }
  return parts[0].graph->record(std::move(out), std::span<const Var>(parts), [parts, total](Graph& g, const Tensor&, std::span<const double> dy) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.cols();
      if (auto d = g.grad_of(p); !d.empty()) {
        for (std::size_t r = 0; r < p.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) d[r * w + c] += dy[r * total + off + c];
        }
      }
      off += w;
    }
  });
}

/// Stacks `top` above `bottom`.
inline Var concat_rows(Var top, Var bottom) {
  const Tensor& A = top.value();
  const Tensor& B = bottom.value();
  detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "concat_rows: column mismatch");
  Tensor out = Tensor::matrix(A.rows() + B.rows(), A.cols());
  std::copy(A.data().begin(), A.data().end(), out.data().begin());
  std::copy(B.data().begin(), B.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(A.size()));
  return top.graph->record(std::move(out), {top, bottom}, [top, bottom](Graph& g, const Tensor&, std::span<const double> dy) {
    const std::size_t na = top.value().size();
    if (auto d = g.grad_of(top); !d.empty()) {
      for (std::size_t i = 0; i < na; ++i) d[i] += dy[i];
    }
    if (auto d = g.grad_of(bottom); !d.empty()) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[na + i];
    }
  });
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  detail::require(begin + count <= X.rows(), "slice_rows: out of range");
  Tensor out = X.slice_rows(begin, count);
  return x.graph->record(std::move(out), {x}, [x, begin](Graph& g, const Tensor&, std::span<const double> dy) {
    auto dx = g.grad_of(x);
    const std::size_t off = begin * x.value().cols();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[off + i] += dy[i];
  });
}

// ---------------------------------------------------------------------------
// Convolutions

/// Valid 2-D convolution. x: {Cin, H, W}, w: {Cout, Cin, kh, kw}, b: {Cout}.
inline Var conv2d(Var x, Var w, Var b, std::size_t stride) {
  const Tensor& X = x.value();
  const Tensor& K = w.value();
  detail::require(X.rank() == 3 && K.rank() == 4 && K.shape()[1] == X.shape()[0], "conv2d: shape mismatch");
  const std::size_t cin = X.shape()[0], h = X.shape()[1], wd = X.shape()[2];
  const std::size_t cout = K.shape()[0], kh = K.shape()[2], kw = K.shape()[3];
  detail::require(h >= kh && wd >= kw, "conv2d: input smaller than kernel");
  detail::require(b.value().size() == cout, "conv2d: bias size");
  const std::size_t oh = (h - kh) / stride + 1;
  const std::size_t ow = (wd - kw) / stride + 1;
  const std::size_t patch = cin * kh * kw;

  // im2col: one row per output position
  auto cols = std::make_shared<Tensor>(Tensor::matrix(oh * ow, patch));
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      auto dst = cols->row(oy * ow + ox);
      std::size_t p = 0;
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const double* src = X.data().data() + (c * h + oy * stride + ky) * wd + ox * stride;
          for (std::size_t kx = 0; kx < kw; ++kx) dst[p++] = src[kx];
        }
      }
    }
  }
  Tensor out({cout, oh, ow});
  auto Y = detail::as_mat(out.data(), cout, oh * ow);
  Y.noalias() = detail::as_mat(K.data(), cout, patch) * detail::as_mat(*cols).transpose();
  const auto bd = b.value().data();
  for (std::size_t c = 0; c < cout; ++c) Y.row(static_cast<Eigen::Index>(c)).array() += bd[c];

  return x.graph->record(std::move(out), {x, w, b},
                         [x, w, b, cols, stride, cin, h, wd, cout, kh, kw, oh, ow, patch](Graph& g, const Tensor&, std::span<const double> dy) {
    auto dY = detail::as_mat(dy, cout, oh * ow);
    if (auto dw = g.grad_of(w); !dw.empty()) {
      detail::as_mat(dw, cout, patch).noalias() += dY * detail::as_mat(*cols);
    }
    if (auto db = g.grad_of(b); !db.empty()) {
      for (std::size_t c = 0; c < cout; ++c) db[c] += dY.row(static_cast<Eigen::Index>(c)).sum();
    }
    if (auto dx = g.grad_of(x); !dx.empty()) {
      detail::RowMat dcols = dY.transpose() * detail::as_mat(w.value().data(), cout, patch);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double* src = dcols.data() + (oy * ow + ox) * patch;
          std::size_t p = 0;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              double* dst = dx.data() + (c * h + oy * stride + ky) * wd + ox * stride;
              for (std::size_t kx = 0; kx < kw; ++kx) dst[kx] += src[p++];
            }
          }
        }
      }
    }
  });
}

/// {C, T, F} -> T x (C*F), channel-major within a row.
inline Var flatten_channels(Var x) {
  const Tensor& X = x.value();
  detail::require(X.rank() == 3, "flatten_channels: expected rank 3");
  const std::size_t c = X.shape()[0], t = X.shape()[1], f = X.shape()[2];
  Tensor out = Tensor::matrix(t, c * f);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      for (std::size_t fi = 0; fi < f; ++fi) out(ti, ci * f + fi) = X[(ci * t + ti) * f + fi];
    }
  }
  return x.graph->record(std::move(out), {x}, [x, c, t, f](Graph& g, const Tensor&, std::span<const double> dy) {
    auto dx = g.grad_of(x);
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ti = 0; ti < t; ++ti) {
        for (std::size_t fi = 0; fi < f; ++fi) dx[(ci * t + ti) * f + fi] += dy[ti * c * f + ci * f + fi];
      }
    }
  });
}

/// Valid depthwise 1-D convolution over time.
/// x: (T + K - 1) x D, w: K x D, b: D  ->  T x D with
/// y[t][d] = b[d] + sum_j w[j][d] * x[t + j][d].
inline Var depthwise_conv1d(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  detail::require_matrix(X, "depthwise_conv1d");
  detail::require_matrix(W, "depthwise_conv1d");
  const std::size_t k = W.rows();
  const std::size_t d = W.cols();
  detail::require(X.cols() == d && b.value().size() == d, "depthwise_conv1d: channel mismatch");
  detail::require(X.rows() >= k, "depthwise_conv1d: input shorter than kernel");
  const std::size_t t = X.rows() - k + 1;
  Tensor out = Tensor::matrix(t, d);
  const auto bd = b.value().data();
  for (std::size_t ti = 0; ti < t; ++ti) {
    auto yr = out.row(ti);
    for (std::size_t c = 0; c < d; ++c) yr[c] = bd[c];
    for (std::size_t j = 0; j < k; ++j) {
      const auto xr = X.row(ti + j);
      const auto wr = W.row(j);
      for (std::size_t c = 0; c < d; ++c) yr[c] += wr[c] * xr[c];
    }
  }
  return x.graph->record(std::move(out), {x, w, b}, [x, w, b, t, k, d](Graph& g, const Tensor&, std::span<const double> dy) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    auto dx = g.grad_of(x);
    auto dw = g.grad_of(w);
    auto db = g.grad_of(b);
    for (std::size_t ti = 0; ti < t; ++ti) {
      const double* gy = dy.data() + ti * d;
      if (!db.empty()) {
        for (std::size_t c = 0; c < d; ++c) db[c] += gy[c];
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (!dw.empty()) {
          const auto xr = X.row(ti + j);
          for (std::size_t c = 0; c < d; ++c) dw[j * d + c] += gy[c] * xr[c];
        }
        if (!dx.empty()) {
          const auto wr = W.row(j);
          for (std::size_t c = 0; c < d; ++c) dx[(ti + j) * d + c] += gy[c] * wr[c];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Label-smoothed negative log-likelihood summed over rows:
/// -sum_i [(1 - eps) lp[i][y_i] + (eps / V) sum_k lp[i][k]].
inline Var smoothed_nll(Var log_probs, std::vector<int> targets, double smoothing) {
  const Tensor& LP = log_probs.value();
  detail::require_matrix(LP, "smoothed_nll");
  detail::require(LP.rows() == targets.size(), "smoothed_nll: target count");
  const std::size_t v = LP.cols();
  const double off = smoothing / static_cast<double>(v);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = LP.row(i);
    double all = 0.0;
    for (double x : row) all += x;
    loss -= (1.0 - smoothing) * row[static_cast<std::size_t>(targets[i])] + off * all;
  }
  return log_probs.graph->record(Tensor::scalar(loss), {log_probs},
                                 [log_probs, targets = std::move(targets), smoothing, off, v](Graph& g, const Tensor&, std::span<const double> dy) {
    auto d = g.grad_of(log_probs);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      for (std::size_t c = 0; c < v; ++c) d[i * v + c] -= dy[0] * off;
      d[i * v + static_cast<std::size_t>(targets[i])] -= dy[0] * (1.0 - smoothing);
    }
  });
}

}  // namespace u2
