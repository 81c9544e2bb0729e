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

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "u2/numerics/graph.hpp"
#include "u2/numerics/random.hpp"

namespace u2 {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of a scalar objective against central
/// differences on up to `max_coords` parameter coordinates (all of them
/// when there are fewer). Relative error is |a - n| / max(1, |a|).
///
/// `objective` must build the same deterministic scalar each call; it is
/// invoked once on a recording graph and twice per coordinate on
/// non-recording graphs.
inline GradCheckResult grad_check(const std::function<Var(Graph&)>& objective, std::span<Tensor* const> params,
                                  double eps, std::size_t max_coords = 128, std::uint64_t seed = 0) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw Error("grad_check: eps must be in [1e-7, 1e-3]");

  std::vector<bool> saved_flags;
  for (Tensor* p : params) {
    saved_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->drop_grad();
  }
  {
    Graph g(true);
    Var loss = objective(g);
    if (!std::isfinite(loss.item())) throw Error("non-finite objective");
    g.backward(loss);
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi]->size(); ++i) coords.emplace_back(pi, i);
  }
  if (coords.size() > max_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coords; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coords);
  }

  auto eval = [&objective]() {
    Graph g(false);
    const double v = objective(g).item();
    if (!std::isfinite(v)) throw Error("non-finite objective");
    return v;
  };

  GradCheckResult result;
  for (auto [pi, i] : coords) {
    Tensor& p = *params[pi];
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    const double x0 = p[i];
    p[i] = x0 + eps;
    const double up = eval();
    p[i] = x0 - eps;
    const double down = eval();
    p[i] = x0;
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.coords_checked;
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    params[pi]->set_requires_grad(saved_flags[pi]);
    params[pi]->drop_grad();
  }
  return result;
}

}  // namespace u2
