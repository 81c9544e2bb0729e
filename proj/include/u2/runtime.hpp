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

// Two-pass decoding. A DecodeSession takes raw feature frames as they
// arrive, runs the encoder and CTC prefix search one chunk at a time, and
// on finalize picks the transcript with one of three second-pass modes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "u2/aed.hpp"
#include "u2/ctc.hpp"
#include "u2/encoder.hpp"
#include "u2/masking.hpp"
#include "u2/model.hpp"
#include "u2/synthetic.hpp"

namespace u2 {

constexpr int kFrameShiftMs = 10;

enum class DecodeMode { kCtcOnly, kAttention, kRescoring };

inline const char* mode_name(DecodeMode m) {
  switch (m) {
    case DecodeMode::kCtcOnly:
      return "ctc";
    case DecodeMode::kAttention:
      return "attention";
    case DecodeMode::kRescoring:
      return "rescoring";
  }
  return "?";
}

inline DecodeMode parse_mode(const std::string& s) {
  if (s == "ctc" || s == "ctc_only") return DecodeMode::kCtcOnly;
  if (s == "attention" || s == "attention_decoder") return DecodeMode::kAttention;
  if (s == "rescoring" || s == "attention_rescoring") return DecodeMode::kRescoring;
  throw Error("unknown decode mode " + s);
}

struct DecodeOptions {
  long long chunk = 16;  // encoder frames per chunk, kFullChunk for full context
  std::size_t beam = 10;
  std::size_t nbest = 10;
  double ctc_weight = 0.5;
  std::size_t attention_beam = 10;

  void validate() const {
    if (chunk < 0) throw Error("chunk must be >= 0");
    if (nbest < 1 || beam < nbest) throw Error("prefix search requires beam >= nbest >= 1");
    if (attention_beam < 1) throw Error("attention beam must be >= 1");
    if (ctc_weight < 0.0) throw Error("ctc_weight must be >= 0");
  }
};

struct DecodeTiming {
  double audio_ms = 0.0;
  double first_pass_ms = 0.0;
  double rescore_ms = 0.0;
  double rtf = 0.0;  // (first_pass_ms + rescore_ms) / audio_ms
};

struct DecodeResult {
  DecodeMode mode = DecodeMode::kRescoring;
  TokenSeq transcript;
  std::vector<ScoredHypothesis> nbest;  // best first
  DecodeTiming timing;
  LatencyBounds latency;
  std::size_t frames = 0;  // encoder frames
};

struct PartialResult {
  std::size_t frames = 0;  // encoder frames decoded so far
  TokenSeq best;
  std::vector<CtcHypothesis> nbest;
};

inline void to_json(nlohmann::json& j, const ScoredHypothesis& h) {
  j = {{"tokens", h.labels}, {"ctc_score", h.ctc_score}, {"att_score", h.att_score}, {"final_score", h.final_score}};
}

inline void to_json(nlohmann::json& j, const DecodeResult& r) {
  j = {{"mode", mode_name(r.mode)},
       {"transcript", r.transcript},
       {"nbest", r.nbest},
       {"frames", r.frames},
       {"timing",
        {{"audio_ms", r.timing.audio_ms},
         {"first_pass_ms", r.timing.first_pass_ms},
         {"rescore_ms", r.timing.rescore_ms},
         {"rtf", r.timing.rtf}}},
       {"latency", {{"chunk_max_ms", r.latency.max_ms}, {"chunk_avg_ms", r.latency.avg_ms}}}};
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

inline double ctc_sequence_score(const PosteriorGrid& grid, const TokenSeq& labels) {
  for (int tok : labels) {
    if (tok <= kBlank || static_cast<std::size_t>(tok) >= grid.vocab()) return kNegInf;
  }
  const auto al = ctc_forward_backward(grid.data(), grid.frames(), grid.vocab(), labels, false);
  return al.feasible ? al.log_likelihood : kNegInf;
}

/// Second pass over a finished first pass. Fills transcript, nbest and
/// rescore_ms.
inline void second_pass(Model& model, const Tensor& states, const PosteriorGrid& grid,
                        const std::vector<CtcHypothesis>& first, DecodeMode mode, const DecodeOptions& opt,
                        DecodeResult& out) {
  out.mode = mode;
  out.nbest.clear();
  const auto start = Clock::now();
  switch (mode) {
    case DecodeMode::kCtcOnly:
      for (const CtcHypothesis& h : first) out.nbest.push_back({h.labels, h.score, 0.0, h.score});
      out.timing.rescore_ms = 0.0;
      break;
    case DecodeMode::kAttention: {
      const auto hyps = attention_beam_search(model.decoder(), states, opt.attention_beam, states.rows());
      out.timing.rescore_ms = elapsed_ms(start);
      for (std::size_t i = 0; i < hyps.size() && i < opt.nbest; ++i) {
        out.nbest.push_back({hyps[i].labels, ctc_sequence_score(grid, hyps[i].labels), hyps[i].score, hyps[i].score});
      }
      break;
    }
    case DecodeMode::kRescoring: {
      RescoreResult r = rescore(model.decoder(), states, first, opt.ctc_weight);
      out.timing.rescore_ms = elapsed_ms(start);
      out.nbest = std::move(r.hypotheses);
      std::stable_sort(out.nbest.begin(), out.nbest.end(), [](const ScoredHypothesis& a, const ScoredHypothesis& b) {
        if (a.final_score != b.final_score) return a.final_score > b.final_score;
        if (a.ctc_score != b.ctc_score) return a.ctc_score > b.ctc_score;
        return a.labels < b.labels;
      });
      break;
    }
  }
  out.transcript = out.nbest.empty() ? TokenSeq{} : out.nbest.front().labels;
  out.timing.rtf = out.timing.audio_ms > 0.0 ? (out.timing.first_pass_ms + out.timing.rescore_ms) / out.timing.audio_ms : 0.0;
}

}  // namespace detail

/// Streaming first pass plus on-demand second pass for one utterance.
/// The model is only read; several sessions may share it across threads.
class DecodeSession {
 public:
  DecodeSession(Model& model, const DecodeOptions& opt)
      : model_(model),
        opt_(opt),
        cache_(EncoderCache::fresh(model.config().encoder)),
        grid_(static_cast<std::size_t>(model.config().vocab())),
        searcher_(static_cast<std::size_t>(model.config().vocab()), opt.beam),
        feature_dim_(static_cast<std::size_t>(model.config().encoder.feature_dim)),
        states_(Tensor::matrix(0, static_cast<std::size_t>(model.config().encoder.d_model))) {
    opt.validate();
  }

  long long chunk() const { return opt_.chunk; }
  bool closed() const { return closed_; }
  std::size_t raw_frames() const { return raw_total_; }
  std::size_t buffered_frames() const { return buffer_.size() / feature_dim_; }
  std::size_t encoder_frames() const { return grid_.frames(); }
  const PosteriorGrid& posteriors() const { return grid_; }
  const Tensor& encoder_states() const { return states_; }

  /// Raw frames needed before the next chunk can run.
  std::size_t raw_frames_per_chunk() const {
    return static_cast<std::size_t>(kSubsampleRate * (opt_.chunk - 1) + kSubsampleReceptiveField);
  }

  /// Buffers t0 x feature_dim frames and runs every chunk that became
  /// complete. Returns the refreshed partial result when at least one ran.
  std::optional<PartialResult> push_chunk(const Tensor& features) {
    if (closed_) throw Error("session closed");
    if (features.rank() != 2 || (features.rows() > 0 && features.cols() != feature_dim_)) {
      throw Error("feature dimension mismatch");
    }
    buffer_.insert(buffer_.end(), features.storage().begin(), features.storage().end());
    raw_total_ += features.rows();
    if (opt_.chunk == kFullChunk) return std::nullopt;

    const auto start = detail::Clock::now();
    bool ran = false;
    const std::size_t window = raw_frames_per_chunk();
    const auto step = static_cast<std::size_t>(kSubsampleRate * opt_.chunk);
    while (buffered_frames() >= window) {
      run_window(window);
      drop_front(step);
      ran = true;
    }
    first_pass_ms_ += detail::elapsed_ms(start);
    if (!ran) return std::nullopt;
    return partial();
  }

  PartialResult partial() const {
    PartialResult p;
    p.frames = grid_.frames();
    p.nbest = searcher_.nbest(opt_.nbest);
    if (!p.nbest.empty()) p.best = p.nbest.front().labels;
    return p;
  }

  /// Flushes the remaining frames (first call only) and runs the second
  /// pass. May be called again with another mode; the first pass is reused.
  DecodeResult finalize(DecodeMode mode) {
    if (!closed_) {
      const auto start = detail::Clock::now();
      const std::size_t rest = buffered_frames();
      if (subsampled_length(static_cast<long long>(rest)) > 0) run_window(rest);
      buffer_.clear();
      closed_ = true;
      first_pass_ms_ += detail::elapsed_ms(start);
      if (grid_.frames() > 0) first_ = searcher_.nbest(opt_.nbest);
    }
    if (grid_.frames() == 0) throw Error("empty utterance");
    DecodeResult out;
    out.frames = grid_.frames();
    out.timing.audio_ms = static_cast<double>(raw_total_) * kFrameShiftMs;
    out.timing.first_pass_ms = first_pass_ms_;
    const long long c = opt_.chunk == kFullChunk ? static_cast<long long>(grid_.frames()) : opt_.chunk;
    out.latency = latency_bounds(c, kSubsampleRate, kFrameShiftMs);
    detail::second_pass(model_, states_, grid_, first_, mode, opt_, out);
    return out;
  }

 private:
  void run_window(std::size_t frames) {
    Graph g(false);
    Tensor raw = Tensor::matrix(frames, feature_dim_,
                                std::vector<double>(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(frames * feature_dim_)));
    Var sub = model_.encoder().subsample(g, g.constant(std::move(raw)));
    Var states = model_.encoder().encode_chunk(g, sub, cache_);
    const Tensor& lp = model_.ctc_log_probs(g, states).value();
    const std::size_t first = grid_.frames();
    grid_.append(lp);
    searcher_.advance(grid_, first);
    append_rows(states_, states.value());
  }

  void drop_front(std::size_t frames) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(frames * feature_dim_));
  }

  static void append_rows(Tensor& into, const Tensor& rows) {
    std::vector<double> data = into.storage();
    data.insert(data.end(), rows.storage().begin(), rows.storage().end());
    into = Tensor::matrix(into.rows() + rows.rows(), into.cols(), std::move(data));
  }

  Model& model_;
  DecodeOptions opt_;
  EncoderCache cache_;
  PosteriorGrid grid_;
  CtcPrefixSearcher searcher_;
  std::size_t feature_dim_;
  Tensor states_;
  std::vector<double> buffer_;
  std::size_t raw_total_ = 0;
  double first_pass_ms_ = 0.0;
  bool closed_ = false;
  std::vector<CtcHypothesis> first_;
};

/// One-shot decode: whole-utterance encoding under the chunk mask, then the
/// same first and second passes as a session.
inline DecodeResult offline_decode(Model& model, const Tensor& features, DecodeMode mode, const DecodeOptions& opt) {
  opt.validate();
  const auto start = detail::Clock::now();
  Graph g(false);
  Var sub = model.encoder().subsample(g, g.constant(features));
  Var states = model.encoder().encode_full(g, sub, opt.chunk);
  const PosteriorGrid grid = PosteriorGrid::from_tensor(model.ctc_log_probs(g, states).value());
  const auto first = ctc_prefix_beam_search(grid, opt.beam, opt.nbest);
  DecodeResult out;
  out.frames = grid.frames();
  out.timing.audio_ms = static_cast<double>(features.rows()) * kFrameShiftMs;
  out.timing.first_pass_ms = detail::elapsed_ms(start);
  const long long c = opt.chunk == kFullChunk ? static_cast<long long>(grid.frames()) : opt.chunk;
  out.latency = latency_bounds(c, kSubsampleRate, kFrameShiftMs);
  detail::second_pass(model, states.value(), grid, first, mode, opt, out);
  return out;
}

/// Token-level Levenshtein distance.
inline std::size_t edit_distance(const TokenSeq& ref, const TokenSeq& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0U : 1U)});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

struct BenchRow {
  long long chunk = 0;  // kFullChunk for full context
  DecodeMode mode = DecodeMode::kRescoring;
  double error_rate = 0.0;  // edit distance / reference tokens, pooled
  std::size_t errors = 0;
  std::size_t ref_tokens = 0;
  double rtf = 0.0;          // total compute / total audio
  double compute_ms = 0.0;   // total over the set
  double latency_max_ms = 0.0;
  double latency_avg_ms = 0.0;
  double rescore_ms = 0.0;   // mean per utterance
  std::size_t utterances = 0;
};

inline std::string chunk_label(long long chunk) { return chunk == kFullChunk ? "full" : std::to_string(chunk); }

inline void to_json(nlohmann::json& j, const BenchRow& r) {
  j = {{"chunk", chunk_label(r.chunk)}, {"mode", mode_name(r.mode)},   {"err", r.error_rate},
       {"errors", r.errors},            {"ref_tokens", r.ref_tokens},  {"rtf", r.rtf},
       {"compute_ms", r.compute_ms},    {"latency_ms", r.latency_max_ms}, {"latency_avg_ms", r.latency_avg_ms},
       {"rescore_ms", r.rescore_ms},    {"utterances", r.utterances}};
}

/// Decodes every utterance once per chunk size through a streaming session
/// fed one raw chunk at a time, finalizing it in each requested mode. For
/// full context the latency columns are per-utterance means.
inline std::vector<BenchRow> bench(Model& model, const Dataset& ds, const std::vector<long long>& chunks,
                                   const std::vector<DecodeMode>& modes, DecodeOptions opt = {}) {
  SyntheticTask gen(ds.task);
  std::vector<BenchRow> rows;
  for (long long chunk : chunks) {
    opt.chunk = chunk;
    std::vector<BenchRow> block(modes.size());
    double audio_ms = 0.0;
    for (std::size_t m = 0; m < modes.size(); ++m) {
      block[m].chunk = chunk;
      block[m].mode = modes[m];
    }
    for (const Utterance& u : ds.utterances) {
      const Tensor x = ds.features(gen, u);
      DecodeSession session(model, opt);
      const std::size_t piece = chunk == kFullChunk ? x.rows() : static_cast<std::size_t>(kSubsampleRate * chunk);
      for (std::size_t at = 0; at < x.rows(); at += piece) session.push_chunk(x.slice_rows(at, std::min(piece, x.rows() - at)));
      for (std::size_t m = 0; m < modes.size(); ++m) {
        const DecodeResult r = session.finalize(modes[m]);
        BenchRow& row = block[m];
        row.errors += edit_distance(u.tokens, r.transcript);
        row.ref_tokens += u.tokens.size();
        row.compute_ms += r.timing.first_pass_ms + r.timing.rescore_ms;
        row.rescore_ms += r.timing.rescore_ms;
        row.latency_max_ms += r.latency.max_ms;
        row.latency_avg_ms += r.latency.avg_ms;
        ++row.utterances;
        if (m == 0) audio_ms += r.timing.audio_ms;
      }
    }
    for (BenchRow& row : block) {
      const auto n = static_cast<double>(std::max<std::size_t>(row.utterances, 1));
      row.error_rate = row.ref_tokens > 0 ? static_cast<double>(row.errors) / static_cast<double>(row.ref_tokens) : 0.0;
      row.rtf = audio_ms > 0.0 ? row.compute_ms / audio_ms : 0.0;
      row.rescore_ms /= n;
      row.latency_max_ms /= n;
      row.latency_avg_ms /= n;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace u2
