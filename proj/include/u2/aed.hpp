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

// Attention decoder: transformer decoder blocks over encoder states, used
// either autoregressively (beam search) or in teacher-forcing mode to
// rescore first-pass hypotheses.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "u2/ctc.hpp"
#include "u2/masking.hpp"
#include "u2/nn.hpp"

namespace u2 {

struct DecoderConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab = 18;  // blank (0), real tokens, sos/eos (vocab - 1)

  int sos() const { return vocab - 1; }
  int eos() const { return vocab - 1; }

  void validate() const {
    if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1) throw Error("decoder dimensions must be positive");
    if (d_model % heads != 0) throw Error("d_model must be divisible by heads");
    if (vocab < 3) throw Error("vocabulary must hold blank, one token and sos/eos");
  }

  bool operator==(const DecoderConfig&) const = default;
};

struct DecoderBlock {
  LayerNorm self_norm;
  MultiHeadAttention self_attn;
  LayerNorm cross_norm;
  MultiHeadAttention cross_attn;
  LayerNorm ff_norm;
  FeedForward ff;

  DecoderBlock() = default;
  DecoderBlock(const DecoderConfig& cfg, Rng& rng)
      : self_norm(static_cast<std::size_t>(cfg.d_model)),
        self_attn(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.heads), rng),
        cross_norm(static_cast<std::size_t>(cfg.d_model)),
        cross_attn(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.heads), rng),
        ff_norm(static_cast<std::size_t>(cfg.d_model)),
        ff(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.d_ff), rng) {}

  Var operator()(Graph& g, Var x, Var memory, const AttentionMask& causal, const AttentionMask& cross,
                 const ForwardContext& ctx) {
    Var h = self_norm(g, x);
    x = add(x, dropout(self_attn.attend(g, self_attn.query(g, h), self_attn.key(g, h), self_attn.value(g, h), causal), ctx));
    h = cross_norm(g, x);
    x = add(x, dropout(cross_attn.attend(g, cross_attn.query(g, h), cross_attn.key(g, memory), cross_attn.value(g, memory), cross),
                       ctx));
    return add(x, dropout(ff(g, ff_norm(g, x), ctx), ctx));
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    self_norm.visit(prefix + ".self_norm", f);
    self_attn.visit(prefix + ".self_attn", f);
    cross_norm.visit(prefix + ".cross_norm", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    ff_norm.visit(prefix + ".ff_norm", f);
    ff.visit(prefix + ".ff", f);
  }
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& cfg, Rng& rng)
      : config_(cfg),
        embed_(uniform_init({static_cast<std::size_t>(cfg.vocab), static_cast<std::size_t>(cfg.d_model)}, 1.0, rng)),
        after_norm_(static_cast<std::size_t>(cfg.d_model)),
        output_(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.vocab), rng) {
    cfg.validate();
    for (int i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg, rng);
  }

  const DecoderConfig& config() const { return config_; }

  /// Logits |y_in| x V. Row i depends on y_in[0..i] and on all of memory.
  Var forward(Graph& g, Var memory, const TokenSeq& y_in, const ForwardContext& ctx = {}) {
    if (y_in.empty() || y_in.front() != config_.sos()) throw Error("decoder input must start with sos");
    for (int tok : y_in) {
      if (tok < 0 || tok >= config_.vocab) throw Error("vocabulary overflow");
    }
    if (memory.value().rank() != 2 || memory.cols() != static_cast<std::size_t>(config_.d_model) || memory.rows() == 0) {
      throw Error("decoder memory must be a non-empty T x d_model matrix");
    }
    const std::size_t len = y_in.size();
    const auto d = static_cast<std::size_t>(config_.d_model);
    Var x = add(scale(embedding(g.param(embed_), y_in), std::sqrt(static_cast<double>(d))),
                g.constant(sinusoidal_positions(0, len, d)));
    x = dropout(x, ctx);
    const AttentionMask causal = make_chunk_mask(static_cast<long long>(len), 1);
    const AttentionMask cross = AttentionMask::all(len, memory.rows());
    for (DecoderBlock& b : blocks_) x = b(g, x, memory, causal, cross, ctx);
    return output_(g, after_norm_(g, x));
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".embed", embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + ".blocks." + std::to_string(i), f);
    after_norm_.visit(prefix + ".after_norm", f);
    output_.visit(prefix + ".output", f);
  }

 private:
  DecoderConfig config_;
  Tensor embed_;
  std::vector<DecoderBlock> blocks_;
  LayerNorm after_norm_;
  Linear output_;
};

/// Teacher-forcing log-probability of `labels` followed by eos.
inline double teacher_forcing_score(Decoder& decoder, const Tensor& states, const TokenSeq& labels) {
  Graph g(false);
  TokenSeq y_in{decoder.config().sos()};
  y_in.insert(y_in.end(), labels.begin(), labels.end());
  const Tensor& lp = log_softmax(decoder.forward(g, g.constant(states), y_in)).value();
  double score = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) score += lp(i, static_cast<std::size_t>(labels[i]));
  return score + lp(labels.size(), static_cast<std::size_t>(decoder.config().eos()));
}

struct AttentionHypothesis {
  TokenSeq labels;
  double score = 0.0;  // sum of token log-probs, eos included when ended
  bool ended = false;  // false means cut at max_len
};

/// Length-capped autoregressive beam search. Ended hypotheses stay in the
/// beam and compete with live ones until every slot has ended or max_len
/// steps have run. Equal scores break lexicographically on the labels.
inline std::vector<AttentionHypothesis> attention_beam_search(Decoder& decoder, const Tensor& states, std::size_t beam,
                                                              std::size_t max_len) {
  if (beam < 1) throw Error("beam must be >= 1");
  const int eos = decoder.config().eos();
  const auto vocab = static_cast<std::size_t>(decoder.config().vocab);
  auto better = [](const AttentionHypothesis& a, const AttentionHypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.labels != b.labels) return a.labels < b.labels;
    return a.ended && !b.ended;
  };

  std::vector<AttentionHypothesis> hyps{AttentionHypothesis{}};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<AttentionHypothesis> candidates;
    for (const AttentionHypothesis& h : hyps) {
      if (h.ended) {
        candidates.push_back(h);
        continue;
      }
      Graph g(false);
      TokenSeq y_in{decoder.config().sos()};
      y_in.insert(y_in.end(), h.labels.begin(), h.labels.end());
      const Tensor& lp = log_softmax(decoder.forward(g, g.constant(states), y_in)).value();
      const auto last = lp.row(lp.rows() - 1);
      std::vector<std::size_t> order(vocab);
      for (std::size_t v = 0; v < vocab; ++v) order[v] = v;
      const std::size_t take = std::min(beam, vocab);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                        [&last](std::size_t a, std::size_t b) { return last[a] != last[b] ? last[a] > last[b] : a < b; });
      for (std::size_t i = 0; i < take; ++i) {
        const int tok = static_cast<int>(order[i]);
        AttentionHypothesis next = h;
        next.score += last[order[i]];
        if (tok == eos) {
          next.ended = true;
        } else {
          next.labels.push_back(tok);
        }
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    if (candidates.size() > beam) candidates.resize(beam);
    hyps = std::move(candidates);
    if (std::all_of(hyps.begin(), hyps.end(), [](const AttentionHypothesis& h) { return h.ended; })) break;
  }
  std::sort(hyps.begin(), hyps.end(), better);
  return hyps;
}

/// One rescored first-pass hypothesis. final_score = ctc_weight * ctc_score + att_score.
struct ScoredHypothesis {
  TokenSeq labels;
  double ctc_score = 0.0;
  double att_score = 0.0;
  double final_score = 0.0;
};

struct RescoreResult {
  ScoredHypothesis best;
  std::vector<ScoredHypothesis> hypotheses;  // input order
};

/// Fills final_score = ctc_weight * ctc_score + att_score and picks the
/// best: highest final score, then higher CTC score, then the
/// lexicographically smaller label sequence.
inline RescoreResult combine_scores(std::vector<ScoredHypothesis> hyps, double ctc_weight) {
  if (hyps.empty()) throw Error("nothing to rescore");
  if (ctc_weight < 0.0) throw Error("ctc_weight must be >= 0");
  for (ScoredHypothesis& h : hyps) h.final_score = ctc_weight * h.ctc_score + h.att_score;
  RescoreResult out;
  out.best = *std::min_element(hyps.begin(), hyps.end(), [](const ScoredHypothesis& a, const ScoredHypothesis& b) {
    if (a.final_score != b.final_score) return a.final_score > b.final_score;
    if (a.ctc_score != b.ctc_score) return a.ctc_score > b.ctc_score;
    return a.labels < b.labels;
  });
  out.hypotheses = std::move(hyps);
  return out;
}

/// Rescoring mode: one teacher-forced decoder pass per first-pass
/// hypothesis, combined with its CTC score.
inline RescoreResult rescore(Decoder& decoder, const Tensor& states, const std::vector<CtcHypothesis>& nbest,
                             double ctc_weight) {
  if (nbest.empty()) throw Error("nothing to rescore");
  if (ctc_weight < 0.0) throw Error("ctc_weight must be >= 0");
  std::vector<ScoredHypothesis> hyps;
  for (const CtcHypothesis& h : nbest) {
    hyps.push_back({h.labels, h.score, teacher_forcing_score(decoder, states, h.labels), 0.0});
  }
  return combine_scores(std::move(hyps), ctc_weight);
}

}  // namespace u2
