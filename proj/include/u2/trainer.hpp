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

// Joint CTC/attention training with per-batch chunk sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "u2/checkpoint.hpp"
#include "u2/masking.hpp"
#include "u2/model.hpp"
#include "u2/synthetic.hpp"

namespace u2 {

// ---------------------------------------------------------------------------
// Loss

struct LossOptions {
  double ctc_weight = 0.3;
  double label_smoothing = 0.1;
};

struct LossTerms {
  Var total;
  double ctc = 0.0;  // unweighted, 0 when the branch is skipped
  double aed = 0.0;
  bool feasible = true;  // false: CTC target cannot fit, nothing recorded
};

/// ctc_weight * L_ctc + (1 - ctc_weight) * L_aed for one utterance, with the
/// encoder run under make_chunk_mask(T, chunk_size). A branch whose weight is
/// zero is not built at all, so its parameters receive no gradient.
inline LossTerms combined_loss(Graph& g, Model& model, const Tensor& features, const TokenSeq& target, long long chunk_size,
                               const LossOptions& opt, const ForwardContext& ctx = {}) {
  if (!(opt.ctc_weight >= 0.0 && opt.ctc_weight <= 1.0)) throw Error("ctc_weight must be in [0,1]");
  Encoder& enc = model.encoder();
  Var frames = enc.subsample(g, g.constant(features));
  const std::size_t t = frames.rows();
  LossTerms out;
  if (opt.ctc_weight > 0.0 && !ctc_feasible(t, target)) {
    out.feasible = false;
    return out;
  }
  Var states = enc.encode_full(g, frames, chunk_size, ctx);
  Var total = g.constant(Tensor::scalar(0.0));
  if (opt.ctc_weight > 0.0) {
    Var l = ctc_loss(model.ctc_log_probs(g, states), target);
    out.ctc = l.item();
    total = add(total, scale(l, opt.ctc_weight));
  }
  if (opt.ctc_weight < 1.0) {
    const DecoderConfig& dc = model.decoder().config();
    TokenSeq y_in{dc.sos()};
    y_in.insert(y_in.end(), target.begin(), target.end());
    TokenSeq y_out = target;
    y_out.push_back(dc.eos());
    Var lp = log_softmax(model.decoder().forward(g, states, y_in, ctx));
    Var l = smoothed_nll(lp, y_out, opt.label_smoothing);
    out.aed = l.item();
    total = add(total, scale(l, 1.0 - opt.ctc_weight));
  }
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------
// Schedule, augmentation, optimizer

inline double lr_schedule(long long step, int d_model, int warmup_steps, double peak_scale = 1.0) {
  if (step < 1) throw Error("lr_schedule: step must be >= 1");
  if (warmup_steps < 1 || d_model < 1) throw Error("lr_schedule: warmup and d_model must be >= 1");
  const auto s = static_cast<double>(step);
  const auto w = static_cast<double>(warmup_steps);
  return peak_scale * std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

struct SpecAugmentConfig {
  bool enabled = true;
  int num_freq_masks = 2;
  int F = 2;
  int num_time_masks = 2;
  int T_mask = 4;

  bool operator==(const SpecAugmentConfig&) const = default;
};

/// Zeroes random frequency bands (width <= F) and time spans (width <= T_mask).
inline Tensor spec_augment(const Tensor& features, const SpecAugmentConfig& cfg, Rng& rng) {
  if (features.rank() != 2) throw Error("spec_augment: features must be a matrix");
  Tensor out = features;
  if (!cfg.enabled) return out;
  const std::size_t frames = out.rows();
  const std::size_t dims = out.cols();
  auto band = [&rng](int max_width, std::size_t extent, std::size_t& start) {
    const auto limit = std::min<std::size_t>(static_cast<std::size_t>(std::max(max_width, 0)), extent);
    const std::size_t width = rng.below(limit + 1);
    start = rng.below(extent - width + 1);
    return width;
  };
  for (int m = 0; m < cfg.num_freq_masks; ++m) {
    std::size_t start = 0;
    const std::size_t width = band(cfg.F, dims, start);
    for (std::size_t r = 0; r < frames; ++r) {
      for (std::size_t c = start; c < start + width; ++c) out(r, c) = 0.0;
    }
  }
  for (int m = 0; m < cfg.num_time_masks; ++m) {
    std::size_t start = 0;
    const std::size_t width = band(cfg.T_mask, frames, start);
    for (std::size_t r = start; r < start + width; ++r) {
      for (std::size_t c = 0; c < dims; ++c) out(r, c) = 0.0;
    }
  }
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double grad_clip = 5.0;  // global L2 norm; <= 0 disables
};

class Adam {
 public:
  Adam(std::vector<Tensor*> params, const AdamConfig& cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (Tensor* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  long long steps() const { return steps_; }

  /// Applies one update from the accumulated gradients and returns their
  /// global norm before clipping. Gradients are left in place.
  double step(double lr) {
    double sq = 0.0;
    for (Tensor* p : params_) {
      if (!p->has_grad()) continue;
      for (double gi : p->grad()) sq += gi * gi;
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      if (!p.has_grad()) continue;
      auto gr = p.grad();
      auto w = p.data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = gr[k] * clip;
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * gk;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + cfg_.eps);
      }
    }
    return norm;
  }

 private:
  std::vector<Tensor*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long long steps_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double lambda_ctc = 0.3;
  ChunkPolicy chunk_policy = ChunkPolicy::dynamic();
  int warmup_steps = 500;
  double peak_scale = 1.0;
  int batch_size = 16;
  int accum_steps = 1;
  int epochs = 20;
  std::uint64_t seed = 1;
  SpecAugmentConfig specaug;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  double grad_clip = 5.0;
  int keep_top = 10;
  long long max_steps = 0;  // 0: run all epochs

  void validate() const {
    if (!(lambda_ctc >= 0.0 && lambda_ctc <= 1.0)) throw Error("lambda_ctc must be in [0,1]");
    if (warmup_steps < 1) throw Error("warmup_steps must be >= 1");
    if (batch_size < 1 || accum_steps < 1 || epochs < 1 || keep_top < 1) throw Error("batch_size, accum_steps, epochs and keep_top must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must be in [0,1)");
    chunk_policy.validate();
  }
};

inline void to_json(nlohmann::json& j, const ChunkPolicy& p) {
  const char* mode = p.mode == ChunkMode::kFull ? "full" : p.mode == ChunkMode::kStatic ? "static" : "dynamic";
  j = {{"mode", mode}, {"static_chunk", p.static_chunk}, {"cap", p.cap}, {"full_fraction", p.full_fraction}};
}

inline void from_json(const nlohmann::json& j, ChunkPolicy& p) {
  const auto mode = j.value("mode", std::string("dynamic"));
  if (mode == "full") {
    p.mode = ChunkMode::kFull;
  } else if (mode == "static") {
    p.mode = ChunkMode::kStatic;
  } else if (mode == "dynamic") {
    p.mode = ChunkMode::kDynamic;
  } else {
    throw Error("unknown chunk mode " + mode);
  }
  p.static_chunk = j.value("static_chunk", p.static_chunk);
  p.cap = j.value("cap", p.cap);
  p.full_fraction = j.value("full_fraction", p.full_fraction);
}

inline void to_json(nlohmann::json& j, const SpecAugmentConfig& c) {
  j = {{"enabled", c.enabled}, {"num_freq_masks", c.num_freq_masks}, {"F", c.F}, {"num_time_masks", c.num_time_masks},
       {"T_mask", c.T_mask}};
}

inline void from_json(const nlohmann::json& j, SpecAugmentConfig& c) {
  c.enabled = j.value("enabled", c.enabled);
  c.num_freq_masks = j.value("num_freq_masks", c.num_freq_masks);
  c.F = j.value("F", c.F);
  c.num_time_masks = j.value("num_time_masks", c.num_time_masks);
  c.T_mask = j.value("T_mask", c.T_mask);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda_ctc", c.lambda_ctc},   {"chunk_policy", c.chunk_policy}, {"warmup_steps", c.warmup_steps},
       {"peak_scale", c.peak_scale},   {"batch_size", c.batch_size},     {"accum_steps", c.accum_steps},
       {"epochs", c.epochs},           {"seed", c.seed},                 {"specaug", c.specaug},
       {"dropout", c.dropout},         {"label_smoothing", c.label_smoothing}, {"grad_clip", c.grad_clip},
       {"keep_top", c.keep_top},       {"max_steps", c.max_steps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lambda_ctc = j.value("lambda_ctc", c.lambda_ctc);
  if (j.contains("chunk_policy")) c.chunk_policy = j.at("chunk_policy").get<ChunkPolicy>();
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.peak_scale = j.value("peak_scale", c.peak_scale);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.accum_steps = j.value("accum_steps", c.accum_steps);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("specaug")) {
    if (j.at("specaug").is_boolean()) {
      c.specaug.enabled = j.at("specaug").get<bool>();
    } else {
      c.specaug = j.at("specaug").get<SpecAugmentConfig>();
    }
  }
  c.dropout = j.value("dropout", c.dropout);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.keep_top = j.value("keep_top", c.keep_top);
  c.max_steps = j.value("max_steps", c.max_steps);
}

struct StepMetrics {
  long long step = 0;  // batch counter, 1-based
  int epoch = 0;
  double loss = 0.0;  // mean combined loss over the batch's usable utterances
  double ctc_loss = 0.0;
  double aed_loss = 0.0;
  int chunk_size = 0;
  double lr = 0.0;
  int skipped = 0;

  bool operator==(const StepMetrics&) const = default;
};

inline void to_json(nlohmann::json& j, const StepMetrics& m) {
  j = {{"step", m.step},         {"epoch", m.epoch},   {"loss", m.loss}, {"ctc_loss", m.ctc_loss}, {"aed_loss", m.aed_loss},
       {"chunk_size", m.chunk_size}, {"lr", m.lr}, {"skipped", m.skipped}};
}

struct TrainResult {
  Checkpoint averaged;             // mean of the kept checkpoints
  std::vector<Checkpoint> kept;    // best dev loss first
  std::vector<StepMetrics> steps;
  std::vector<double> dev_losses;  // one per epoch
  long long skipped = 0;
};

/// Mean combined loss over `ds` with full context and no regularization noise.
inline double dev_loss(Model& model, const Dataset& ds, double ctc_weight, double label_smoothing) {
  SyntheticTask gen(ds.task);
  double total = 0.0;
  std::size_t used = 0;
  for (const Utterance& u : ds.utterances) {
    Graph g(false);
    auto terms = combined_loss(g, model, ds.features(gen, u), u.tokens, kFullChunk, {ctc_weight, label_smoothing});
    if (!terms.feasible) continue;
    total += terms.total.item();
    ++used;
  }
  if (used == 0) throw Error("dev set has no usable utterances");
  return total / static_cast<double>(used);
}

class Trainer {
 public:
  using StepCallback = std::function<void(const StepMetrics&)>;
  using EpochCallback = std::function<void(int epoch, double dev_loss)>;

  Trainer(Model& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) { cfg.validate(); }

  StepCallback on_step;
  EpochCallback on_epoch;

  /// Trains `model_` in place. The model ends in its last-step state; the
  /// averaged top checkpoints come back in the result.
  TrainResult run(const Dataset& train, const Dataset& dev) {
    if (train.utterances.empty()) throw Error("empty training set");
    SyntheticTask gen(train.task);
    std::vector<Tensor> feats;
    std::vector<long long> lengths;
    for (const Utterance& u : train.utterances) {
      feats.push_back(train.features(gen, u));
      lengths.push_back(subsampled_length(static_cast<long long>(feats.back().rows())));
    }

    Rng order_rng(mix_seed(cfg_.seed, 1));
    Rng chunk_rng(mix_seed(cfg_.seed, 2));
    Rng aug_rng(mix_seed(cfg_.seed, 3));
    Rng drop_rng(mix_seed(cfg_.seed, 4));
    std::vector<Tensor*> params;
    model_.visit([&params](const std::string&, Tensor& t) { params.push_back(&t); });
    Adam adam(params, {0.9, 0.98, 1e-9, cfg_.grad_clip});
    const LossOptions opt{cfg_.lambda_ctc, cfg_.label_smoothing};
    const ForwardContext ctx{true, cfg_.dropout, &drop_rng};
    const int d_model = model_.config().encoder.d_model;

    TrainResult result;
    std::vector<std::size_t> order(train.utterances.size());
    long long step = 0;
    int micro = 0;
    model_.zero_grad();
    bool stop = false;
    for (int epoch = 1; epoch <= cfg_.epochs && !stop; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

      for (std::size_t begin = 0; begin < order.size() && !stop; begin += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch_size));
        long long l_max = 0;
        for (std::size_t b = begin; b < end; ++b) l_max = std::max(l_max, lengths[order[b]]);
        const double u = chunk_rng.uniform();
        const double v = chunk_rng.uniform();
        const int chunk = sample_chunk_size(static_cast<int>(l_max), cfg_.chunk_policy, u, v);

        StepMetrics m;
        m.step = ++step;
        m.epoch = epoch;
        m.chunk_size = chunk;
        m.lr = lr_schedule(adam.steps() + 1, d_model, cfg_.warmup_steps, cfg_.peak_scale);
        const double batch_scale = 1.0 / (static_cast<double>(end - begin) * cfg_.accum_steps);
        int used = 0;
        for (std::size_t b = begin; b < end; ++b) {
          const std::size_t idx = order[b];
          const Tensor x = cfg_.specaug.enabled ? spec_augment(feats[idx], cfg_.specaug, aug_rng) : feats[idx];
          Graph g;
          LossTerms terms = combined_loss(g, model_, x, train.utterances[idx].tokens, chunk, opt, ctx);
          if (!terms.feasible) {
            ++m.skipped;
            continue;
          }
          const double value = terms.total.item();
          if (!std::isfinite(value)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << step << " (utterance " << train.utterances[idx].id << ", chunk " << chunk
                << ", ctc " << terms.ctc << ", aed " << terms.aed << ")";
            throw Error(msg.str());
          }
          g.backward(scale(terms.total, batch_scale));
          m.loss += value;
          m.ctc_loss += terms.ctc;
          m.aed_loss += terms.aed;
          ++used;
        }
        if (used > 0) {
          m.loss /= used;
          m.ctc_loss /= used;
          m.aed_loss /= used;
        }
        result.skipped += m.skipped;
        if (++micro == cfg_.accum_steps) {
          adam.step(m.lr);
          model_.zero_grad();
          micro = 0;
        }
        result.steps.push_back(m);
        if (on_step) on_step(m);
        if (cfg_.max_steps > 0 && step >= cfg_.max_steps) stop = true;
      }

      const double dl = dev.utterances.empty() ? result.steps.back().loss
                                               : dev_loss(model_, dev, cfg_.lambda_ctc, cfg_.label_smoothing);
      result.dev_losses.push_back(dl);
      if (on_epoch) on_epoch(epoch, dl);
      keep(result.kept, Checkpoint::from_model(model_, step, dl));
    }
    model_.zero_grad();
    result.averaged = average_checkpoints(result.kept);
    return result;
  }

 private:
  void keep(std::vector<Checkpoint>& kept, Checkpoint c) {
    kept.push_back(std::move(c));
    std::stable_sort(kept.begin(), kept.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.dev_loss < b.dev_loss; });
    if (kept.size() > static_cast<std::size_t>(cfg_.keep_top)) kept.resize(static_cast<std::size_t>(cfg_.keep_top));
  }

  Model& model_;
  TrainConfig cfg_;
};

}  // namespace u2
