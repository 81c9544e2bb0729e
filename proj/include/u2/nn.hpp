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

// Layers shared by the encoder and the attention decoder.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "u2/masking.hpp"
#include "u2/numerics/graph.hpp"
#include "u2/numerics/random.hpp"

namespace u2 {

/// Callback used to enumerate parameters with stable dotted names.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

/// Per-forward settings. Dropout is active only when `train` is set and a
/// generator is supplied.
struct ForwardContext {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

inline Tensor filled_param(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

/// Inverted dropout on a branch output; identity outside training.
inline Var dropout(Var x, const ForwardContext& ctx) {
  if (!ctx.train || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
  Tensor keep(x.value().shape());
  const double scale_kept = 1.0 / (1.0 - ctx.dropout);
  for (double& v : keep.data()) v = ctx.rng->uniform() < ctx.dropout ? 0.0 : scale_kept;
  return mul(x, x.graph->constant(std::move(keep)));
}

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(uniform_init({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng)),
        bias(filled_param({out}, 0.0)) {}

  Var operator()(Graph& g, Var x) { return linear(x, g.param(weight), g.param(bias)); }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gamma(filled_param({d}, 1.0)), beta(filled_param({d}, 0.0)) {}

  Var operator()(Graph& g, Var x) { return layer_norm(x, g.param(gamma), g.param(beta)); }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

struct FeedForward {
  Linear up;
  Linear down;

  FeedForward() = default;
  FeedForward(std::size_t d_model, std::size_t d_ff, Rng& rng) : up(d_model, d_ff, rng), down(d_ff, d_model, rng) {}

  Var operator()(Graph& g, Var x, const ForwardContext& ctx) { return down(g, dropout(relu(up(g, x)), ctx)); }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    up.visit(prefix + ".up", f);
    down.visit(prefix + ".down", f);
  }
};

/// Scaled dot-product attention over `heads` column groups.
struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear query;
  Linear key;
  Linear value;
  Linear output;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t num_heads, Rng& rng)
      : heads(num_heads),
        query(d_model, d_model, rng),
        key(d_model, d_model, rng),
        value(d_model, d_model, rng),
        output(d_model, d_model, rng) {}

  /// q: Tq x d (already projected), k/v: Tk x d (already projected).
  Var attend(Graph& g, Var q, Var k, Var v, const AttentionMask& mask) {
    const std::size_t d = q.cols();
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(q, h * dh, dh);
      Var kh = slice_cols(k, h * dh, dh);
      Var vh = slice_cols(v, h * dh, dh);
      Var probs = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt), mask);
      per_head.push_back(matmul(probs, vh));
    }
    return output(g, heads == 1 ? per_head[0] : concat_cols(per_head));
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    output.visit(prefix + ".output", f);
  }
};

/// Sinusoidal absolute position table rows [offset, offset + count).
inline Tensor sinusoidal_positions(std::size_t offset, std::size_t count, std::size_t d_model) {
  Tensor pe = Tensor::matrix(count, d_model);
  for (std::size_t r = 0; r < count; ++r) {
    const double pos = static_cast<double>(offset + r);
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe(r, i) = std::sin(pos * freq);
      if (i + 1 < d_model) pe(r, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

}  // namespace u2
