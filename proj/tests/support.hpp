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

// Generators and small fixtures shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "u2/u2.hpp"

namespace u2::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  t.set_requires_grad(true);
  return t;
}

/// Random T x V grid of normalized log-distributions.
inline PosteriorGrid random_grid(std::size_t frames, std::size_t vocab, Rng& rng, double sharpness = 1.0) {
  std::vector<double> lp(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    double* row = lp.data() + t * vocab;
    for (std::size_t v = 0; v < vocab; ++v) row[v] = sharpness * rng.normal();
    const double z = logsumexp(std::span<const double>(row, vocab));
    for (std::size_t v = 0; v < vocab; ++v) row[v] -= z;
  }
  return {frames, vocab, std::move(lp)};
}

inline TokenSeq random_labels(std::size_t len, int vocab, Rng& rng) {
  TokenSeq out(len);
  for (int& t : out) t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 1)));
  return out;
}

/// A small model for property tests; fast enough to build hundreds.
inline ModelConfig tiny_config(std::uint64_t seed = 1, int layers = 2, int d_model = 8, int heads = 2, int vocab = 6,
                               int feature_dim = 11, int conv_kernel = 3) {
  ModelConfig c;
  c.encoder.layers = layers;
  c.encoder.heads = heads;
  c.encoder.d_model = d_model;
  c.encoder.d_ff = 2 * d_model;
  c.encoder.conv_kernel = conv_kernel;
  c.encoder.feature_dim = feature_dim;
  c.decoder.layers = layers;
  c.decoder.heads = heads;
  c.decoder.d_model = d_model;
  c.decoder.d_ff = 2 * d_model;
  c.decoder.vocab = vocab;
  c.init_seed = seed;
  return c;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::string tokens_str(const TokenSeq& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Upper tail P(X >= x) of a chi-square variable with `df` degrees of
/// freedom, from the series of the regularized lower incomplete gamma.
inline double chi_square_sf(double x, int df) {
  if (x <= 0.0) return 1.0;
  const double a = 0.5 * df;
  const double z = 0.5 * x;
  double term = 1.0 / a;
  double total = term;
  for (int n = 1; n < 10000; ++n) {
    term *= z / (a + n);
    total += term;
    if (term < total * 1e-17) break;
  }
  const double lower = std::exp(a * std::log(z) - z - std::lgamma(a)) * total;
  return 1.0 - lower;
}

}  // namespace u2::testing
