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

// Connectionist temporal classification: loss with gradient, greedy and
// prefix-beam decoding, and an exhaustive path-enumeration oracle.
// Blank is token 0. All probability arithmetic is in log space.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "u2/numerics/graph.hpp"

namespace u2 {

constexpr int kBlank = 0;

using TokenSeq = std::vector<int>;

/// T x V frame-level log-distributions.
class PosteriorGrid {
 public:
  PosteriorGrid() = default;
  explicit PosteriorGrid(std::size_t vocab) : vocab_(vocab) {}
  PosteriorGrid(std::size_t frames, std::size_t vocab, std::vector<double> log_probs)
      : frames_(frames), vocab_(vocab), log_probs_(std::move(log_probs)) {
    if (log_probs_.size() != frames_ * vocab_) throw Error("posterior grid size mismatch");
  }

  static PosteriorGrid from_tensor(const Tensor& t) {
    if (t.rank() != 2) throw Error("posterior grid must be a matrix");
    return {t.rows(), t.cols(), t.storage()};
  }

  /// Grid from linear-space probabilities (test convenience).
  static PosteriorGrid from_probs(std::size_t frames, std::size_t vocab, const std::vector<double>& probs) {
    std::vector<double> lp(probs.size());
    std::transform(probs.begin(), probs.end(), lp.begin(), [](double p) { return std::log(p); });
    return {frames, vocab, std::move(lp)};
  }

  std::size_t frames() const { return frames_; }
  std::size_t vocab() const { return vocab_; }
  double operator()(std::size_t t, std::size_t v) const { return log_probs_[t * vocab_ + v]; }
  std::span<const double> row(std::size_t t) const { return {log_probs_.data() + t * vocab_, vocab_}; }
  const std::vector<double>& data() const { return log_probs_; }

  /// Appends the rows of a frames x vocab matrix.
  void append(const Tensor& rows) {
    if (rows.rank() != 2 || rows.cols() != vocab_) throw Error("posterior grid append: vocabulary mismatch");
    log_probs_.insert(log_probs_.end(), rows.storage().begin(), rows.storage().end());
    frames_ += rows.rows();
  }

  /// True when every row is a normalized log-distribution within `tol`.
  bool normalized(double tol = 1e-9) const {
    for (std::size_t t = 0; t < frames_; ++t) {
      if (std::abs(logsumexp(row(t))) > tol) return false;
    }
    return true;
  }

 private:
  std::size_t frames_ = 0;
  std::size_t vocab_ = 0;
  std::vector<double> log_probs_;
};

/// Shortest frame count able to emit `target`: one frame per label plus a
/// separating blank between equal neighbours.
inline std::size_t ctc_min_frames(const TokenSeq& target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need;
}

struct CtcAlignment {
  bool feasible = false;
  double log_likelihood = kNegInf;
  /// d log P / d log_probs[t][v], T x V. Empty when infeasible.
  std::vector<double> grad;
};

/// Forward-backward over the blank-augmented label lattice.
inline CtcAlignment ctc_forward_backward(std::span<const double> log_probs, std::size_t frames, std::size_t vocab,
                                         const TokenSeq& target, bool want_grad = true) {
  CtcAlignment out;
  for (int y : target) {
    if (y <= kBlank || static_cast<std::size_t>(y) >= vocab) throw Error("ctc target token out of range");
  }
  if (frames == 0 || ctc_min_frames(target) > frames) return out;

  const std::size_t states = 2 * target.size() + 1;
  auto label = [&](std::size_t s) { return s % 2 == 0 ? kBlank : target[s / 2]; };
  auto lp = [&](std::size_t t, std::size_t s) { return log_probs[t * vocab + static_cast<std::size_t>(label(s))]; };
  // skip transition s-2 -> s is allowed into a label that differs from the previous label
  auto can_skip = [&](std::size_t s) { return s >= 2 && label(s) != kBlank && label(s) != label(s - 2); };

  std::vector<double> alpha(frames * states, kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  const double* last = alpha.data() + (frames - 1) * states;
  double log_p = last[states - 1];
  if (states > 1) log_p = log_add(log_p, last[states - 2]);
  if (log_p == kNegInf) return out;

  out.feasible = true;
  out.log_likelihood = log_p;
  if (!want_grad) return out;

  // beta[t][s]: log-prob of emitting frames t+1.. from state s at frame t
  std::vector<double> beta(frames * states, kNegInf);
  double* tail = beta.data() + (frames - 1) * states;
  tail[states - 1] = 0.0;
  if (states > 1) tail[states - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double b = next[s] == kNegInf ? kNegInf : next[s] + lp(t + 1, s);
      if (s + 1 < states && next[s + 1] != kNegInf) b = log_add(b, next[s + 1] + lp(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2) && next[s + 2] != kNegInf) b = log_add(b, next[s + 2] + lp(t + 1, s + 2));
      cur[s] = b;
    }
  }

  out.grad.assign(frames * vocab, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      const double a = alpha[t * states + s];
      const double b = beta[t * states + s];
      if (a == kNegInf || b == kNegInf) continue;
      out.grad[t * vocab + static_cast<std::size_t>(label(s))] += std::exp(a + b - log_p);
    }
  }
  return out;
}

struct CtcLoss {
  double value = 0.0;  // +inf when infeasible
  bool feasible = false;
};

inline CtcLoss ctc_loss(const PosteriorGrid& grid, const TokenSeq& target) {
  const auto al = ctc_forward_backward(grid.data(), grid.frames(), grid.vocab(), target, false);
  if (!al.feasible) return {std::numeric_limits<double>::infinity(), false};
  return {-al.log_likelihood, true};
}

/// Differentiable -log P(target | log_probs). An infeasible target yields
/// +inf with no gradient; callers check `ctc_feasible` before using it.
inline Var ctc_loss(Var log_probs, const TokenSeq& target) {
  const Tensor& lp = log_probs.value();
  if (lp.rank() != 2) throw Error("ctc_loss: log_probs must be a matrix");
  auto al = std::make_shared<CtcAlignment>(
      ctc_forward_backward(lp.data(), lp.rows(), lp.cols(), target, log_probs.graph->needs_grad(log_probs)));
  const double value = al->feasible ? -al->log_likelihood : std::numeric_limits<double>::infinity();
  return log_probs.graph->record(Tensor::scalar(value), {log_probs}, [log_probs, al](Graph& g, const Tensor&, std::span<const double> dy) {
    if (!al->feasible) return;
    auto d = g.grad_of(log_probs);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[0] * al->grad[i];
  });
}

inline bool ctc_feasible(std::size_t frames, const TokenSeq& target) { return ctc_min_frames(target) <= frames; }

/// Per-frame argmax (lowest index wins ties), merge repeats, drop blanks.
inline TokenSeq ctc_greedy(const PosteriorGrid& grid) {
  TokenSeq out;
  int prev = -1;
  for (std::size_t t = 0; t < grid.frames(); ++t) {
    const auto row = grid.row(t);
    int best = 0;
    for (std::size_t v = 1; v < row.size(); ++v) {
      if (row[v] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
    }
    if (best != kBlank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

/// A label prefix with its blank-ending and label-ending log-probabilities.
struct CtcPrefix {
  TokenSeq labels;
  double p_blank = kNegInf;
  double p_nonblank = kNegInf;

  double total() const { return log_add(p_blank, p_nonblank); }
};

struct CtcHypothesis {
  TokenSeq labels;
  double score = kNegInf;  // log marginal probability of `labels`
};

/// Reproducible ranking: higher score, then shorter, then lexicographic.
inline bool ranks_before(double score_a, const TokenSeq& a, double score_b, const TokenSeq& b) {
  if (score_a != score_b) return score_a > score_b;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

/// Frame-synchronous prefix beam search whose state survives between
/// calls, so a streaming first pass can feed posteriors chunk by chunk and
/// end up exactly where an offline search over the whole grid would.
class CtcPrefixSearcher {
 public:
  CtcPrefixSearcher(std::size_t vocab, std::size_t beam) : vocab_(vocab), beam_(beam) {
    if (beam_ < 1) throw Error("beam must be >= 1");
    prefixes_.push_back(CtcPrefix{{}, 0.0, kNegInf});
  }

  std::size_t frames() const { return frames_; }
  const std::vector<CtcPrefix>& prefixes() const { return prefixes_; }

  void advance(std::span<const double> log_probs) {
    if (log_probs.size() != vocab_) throw Error("prefix search: vocabulary mismatch");
    std::map<TokenSeq, CtcPrefix> next;
    auto slot = [&next](const TokenSeq& labels) -> CtcPrefix& {
      auto [it, inserted] = next.try_emplace(labels);
      if (inserted) it->second.labels = labels;
      return it->second;
    };
    for (const CtcPrefix& pre : prefixes_) {
      for (std::size_t v = 0; v < vocab_; ++v) {
        const double p = log_probs[v];
        if (p == kNegInf) continue;
        const int tok = static_cast<int>(v);
        if (tok == kBlank) {
          CtcPrefix& same = slot(pre.labels);
          same.p_blank = log_add(same.p_blank, pre.total() + p);
          continue;
        }
        TokenSeq extended = pre.labels;
        extended.push_back(tok);
        CtcPrefix& ext = slot(extended);
        if (!pre.labels.empty() && pre.labels.back() == tok) {
          // a repeat only extends the prefix after an intervening blank
          ext.p_nonblank = log_add(ext.p_nonblank, pre.p_blank + p);
          CtcPrefix& same = slot(pre.labels);
          same.p_nonblank = log_add(same.p_nonblank, pre.p_nonblank + p);
        } else {
          ext.p_nonblank = log_add(ext.p_nonblank, pre.total() + p);
        }
      }
    }
    prefixes_.clear();
    for (auto& [labels, pre] : next) {
      if (pre.total() != kNegInf) prefixes_.push_back(std::move(pre));
    }
    sort_and_prune(beam_);
    ++frames_;
  }

  void advance(const PosteriorGrid& grid, std::size_t from_frame = 0) {
    for (std::size_t t = from_frame; t < grid.frames(); ++t) advance(grid.row(t));
  }

  std::vector<CtcHypothesis> nbest(std::size_t n) const {
    std::vector<CtcHypothesis> out;
    for (std::size_t i = 0; i < prefixes_.size() && i < n; ++i) {
      out.push_back({prefixes_[i].labels, prefixes_[i].total()});
    }
    return out;
  }

 private:
  void sort_and_prune(std::size_t keep) {
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(prefixes_.size());
    for (std::size_t i = 0; i < prefixes_.size(); ++i) order.emplace_back(prefixes_[i].total(), i);
    std::sort(order.begin(), order.end(), [this](const auto& a, const auto& b) {
      return ranks_before(a.first, prefixes_[a.second].labels, b.first, prefixes_[b.second].labels);
    });
    std::vector<CtcPrefix> kept;
    for (std::size_t i = 0; i < order.size() && i < keep; ++i) kept.push_back(std::move(prefixes_[order[i].second]));
    prefixes_ = std::move(kept);
  }

  std::size_t vocab_;
  std::size_t beam_;
  std::size_t frames_ = 0;
  std::vector<CtcPrefix> prefixes_;
};

/// Top `nbest` label sequences with approximate log marginals, best first.
inline std::vector<CtcHypothesis> ctc_prefix_beam_search(const PosteriorGrid& grid, std::size_t beam, std::size_t nbest) {
  if (nbest < 1 || beam < nbest) throw Error("prefix search requires beam >= nbest >= 1");
  CtcPrefixSearcher searcher(grid.vocab(), beam);
  searcher.advance(grid);
  return searcher.nbest(nbest);
}

/// Exact log marginal of every label sequence by enumerating all V^T
/// frame paths. Test oracle; refuses instances above 10^6 paths.
inline std::map<TokenSeq, double> ctc_brute_force(const PosteriorGrid& grid) {
  const std::size_t t_max = grid.frames();
  const std::size_t v = grid.vocab();
  double paths = 1.0;
  for (std::size_t t = 0; t < t_max; ++t) paths *= static_cast<double>(v);
  if (paths > 1e6) throw Error("oracle size limit");

  std::map<TokenSeq, double> marginals;
  std::vector<std::size_t> path(t_max, 0);
  const auto total = static_cast<std::size_t>(paths);
  for (std::size_t n = 0; n < total; ++n) {
    std::size_t rest = n;
    for (std::size_t t = t_max; t-- > 0;) {
      path[t] = rest % v;
      rest /= v;
    }
    double lp = 0.0;
    TokenSeq labels;
    int prev = -1;
    for (std::size_t t = 0; t < t_max; ++t) {
      lp += grid(t, path[t]);
      const int tok = static_cast<int>(path[t]);
      if (tok != kBlank && tok != prev) labels.push_back(tok);
      prev = tok;
    }
    auto [it, inserted] = marginals.try_emplace(std::move(labels), kNegInf);
    it->second = log_add(it->second, lp);
  }
  return marginals;
}

}  // namespace u2
