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

// Shared encoder: 4x convolutional subsampling followed by a stack of
// conformer-lite blocks with chunk-masked self-attention and causal
// depthwise convolution.
//
// The same block code serves both paths. encode_full() runs a whole
// utterance under make_chunk_mask(T, C); encode_chunk() runs one chunk
// against the attention history and convolution tail kept in an
// EncoderCache. Because every frame of a chunk sees exactly its own chunk
// plus all earlier chunks in both paths, and the convolution looks only
// backwards, the two produce the same states.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "u2/masking.hpp"
#include "u2/nn.hpp"
#include "u2/numerics/graph.hpp"

namespace u2 {

struct EncoderConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int conv_kernel = 8;
  int subsample_kernel = 3;
  int subsample_stride = 2;
  int feature_dim = 16;

  void validate() const {
    if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1) throw Error("encoder dimensions must be positive");
    if (d_model % heads != 0) throw Error("d_model must be divisible by heads");
    if (conv_kernel < 1) throw Error("conv_kernel must be >= 1");
    if (subsample_kernel != 3 || subsample_stride != 2) throw Error("subsampling is fixed at kernel 3, stride 2");
    if (feature_dim < 7) throw Error("feature_dim must be >= 7");
  }

  bool operator==(const EncoderConfig&) const = default;
};

constexpr int kSubsampleRate = 4;
/// Raw frames consumed by one subsampled output frame.
constexpr int kSubsampleReceptiveField = 7;

/// Output length of the two stride-2, width-3 convolutions.
inline long long subsampled_length(long long raw_frames) {
  if (raw_frames < kSubsampleReceptiveField) return 0;
  return ((raw_frames - 1) / 2 - 1) / 2;
}

/// Streaming state of one encoder block.
struct LayerCache {
  Tensor keys;       // history x d_model, projected keys of earlier frames
  Tensor values;     // history x d_model
  Tensor conv_tail;  // (conv_kernel - 1) x d_model, inputs preceding the next frame
};

/// Streaming state of the whole stack; belongs to one decoding session.
struct EncoderCache {
  std::vector<LayerCache> layers;
  std::size_t consumed_frames = 0;
  std::size_t d_model = 0;
  std::size_t conv_kernel = 0;

  static EncoderCache fresh(const EncoderConfig& cfg) {
    EncoderCache c;
    c.d_model = static_cast<std::size_t>(cfg.d_model);
    c.conv_kernel = static_cast<std::size_t>(cfg.conv_kernel);
    for (int i = 0; i < cfg.layers; ++i) {
      c.layers.push_back(LayerCache{Tensor::matrix(0, c.d_model), Tensor::matrix(0, c.d_model),
                                    Tensor::matrix(c.conv_kernel - 1, c.d_model)});
    }
    return c;
  }
};

struct CausalConvOutput {
  Var output;      // T x d
  Tensor tail;     // last (kernel - 1) rows of tail ++ x
};

/// Depthwise convolution whose output at t sees x[t - K + 1 .. t]. `tail`
/// supplies the K - 1 inputs preceding x (zeros at stream start).
inline CausalConvOutput causal_conv(Var x, Var weight, Var bias, const Tensor& tail) {
  const std::size_t kernel = weight.rows();
  const std::size_t d = weight.cols();
  if (tail.rank() != 2 || tail.rows() != kernel - 1 || tail.cols() != d || x.cols() != d) {
    throw Error("cache shape mismatch");
  }
  Var padded = kernel > 1 ? concat_rows(x.graph->constant(tail), x) : x;
  const Tensor& full = padded.value();
  Tensor next_tail = full.slice_rows(full.rows() - (kernel - 1), kernel - 1);
  return {depthwise_conv1d(padded, weight, bias), std::move(next_tail)};
}

/// Pointwise -> GLU -> causal depthwise -> norm -> relu -> pointwise.
struct CausalConvModule {
  Linear pointwise_in;  // d -> 2d
  Tensor depthwise_weight;  // K x d
  Tensor depthwise_bias;    // d
  LayerNorm depthwise_norm;
  Linear pointwise_out;

  CausalConvModule() = default;
  CausalConvModule(std::size_t d, std::size_t kernel, Rng& rng)
      : pointwise_in(d, 2 * d, rng),
        depthwise_weight(uniform_init({kernel, d}, 1.0 / std::sqrt(static_cast<double>(kernel)), rng)),
        depthwise_bias(filled_param({d}, 0.0)),
        depthwise_norm(d),
        pointwise_out(d, d, rng) {}

  Var operator()(Graph& g, Var x, Tensor& tail) {
    const std::size_t d = x.cols();
    Var doubled = pointwise_in(g, x);
    Var gated = mul(slice_cols(doubled, 0, d), sigmoid(slice_cols(doubled, d, d)));
    auto conv = causal_conv(gated, g.param(depthwise_weight), g.param(depthwise_bias), tail);
    tail = std::move(conv.tail);
    return pointwise_out(g, relu(depthwise_norm(g, conv.output)));
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    pointwise_in.visit(prefix + ".pointwise_in", f);
    f(prefix + ".depthwise.weight", depthwise_weight);
    f(prefix + ".depthwise.bias", depthwise_bias);
    depthwise_norm.visit(prefix + ".depthwise_norm", f);
    pointwise_out.visit(prefix + ".pointwise_out", f);
  }
};

/// Half-step feed-forward, self-attention, causal convolution, each a
/// pre-norm residual branch, then a closing layer norm.
struct EncoderBlock {
  LayerNorm ff_norm;
  FeedForward ff;
  LayerNorm attn_norm;
  MultiHeadAttention attn;
  LayerNorm conv_norm;
  CausalConvModule conv;
  LayerNorm out_norm;

  EncoderBlock() = default;
  EncoderBlock(const EncoderConfig& cfg, Rng& rng)
      : ff_norm(static_cast<std::size_t>(cfg.d_model)),
        ff(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.d_ff), rng),
        attn_norm(static_cast<std::size_t>(cfg.d_model)),
        attn(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.heads), rng),
        conv_norm(static_cast<std::size_t>(cfg.d_model)),
        conv(static_cast<std::size_t>(cfg.d_model), static_cast<std::size_t>(cfg.conv_kernel), rng),
        out_norm(static_cast<std::size_t>(cfg.d_model)) {}

  /// `mask` is T x (history + T). `cache` holds history/tail on entry and
  /// is extended on exit.
  Var operator()(Graph& g, Var x, const AttentionMask& mask, LayerCache& cache, const ForwardContext& ctx) {
    x = add(x, scale(dropout(ff(g, ff_norm(g, x), ctx), ctx), 0.5));

    Var h = attn_norm(g, x);
    Var q = attn.query(g, h);
    Var k = attn.key(g, h);
    Var v = attn.value(g, h);
    if (cache.keys.rows() > 0) {
      k = concat_rows(g.constant(cache.keys), k);
      v = concat_rows(g.constant(cache.values), v);
    }
    x = add(x, dropout(attn.attend(g, q, k, v, mask), ctx));
    cache.keys = k.value();
    cache.values = v.value();
    cache.keys.drop_grad();
    cache.values.drop_grad();

    x = add(x, dropout(conv(g, conv_norm(g, x), cache.conv_tail), ctx));
    return out_norm(g, x);
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    ff_norm.visit(prefix + ".ff_norm", f);
    ff.visit(prefix + ".ff", f);
    attn_norm.visit(prefix + ".attn_norm", f);
    attn.visit(prefix + ".attn", f);
    conv_norm.visit(prefix + ".conv_norm", f);
    conv.visit(prefix + ".conv", f);
    out_norm.visit(prefix + ".out_norm", f);
  }
};

/// Two 3x3 stride-2 convolutions (relu after each) over the time x feature
/// plane, then a projection of the flattened channels to d_model.
struct Subsampling {
  Tensor conv1_weight;  // {d, 1, 3, 3}
  Tensor conv1_bias;
  Tensor conv2_weight;  // {d, d, 3, 3}
  Tensor conv2_bias;
  Linear project;

  Subsampling() = default;
  Subsampling(const EncoderConfig& cfg, Rng& rng) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto k = static_cast<std::size_t>(cfg.subsample_kernel);
    conv1_weight = uniform_init({d, 1, k, k}, 1.0 / std::sqrt(static_cast<double>(k * k)), rng);
    conv1_bias = filled_param({d}, 0.0);
    conv2_weight = uniform_init({d, d, k, k}, 1.0 / std::sqrt(static_cast<double>(d * k * k)), rng);
    conv2_bias = filled_param({d}, 0.0);
    project = Linear(d * reduced_features(cfg.feature_dim), d, rng);
  }

  static std::size_t reduced_features(int feature_dim) {
    return static_cast<std::size_t>(((feature_dim - 1) / 2 - 1) / 2);
  }

  Var operator()(Graph& g, Var features) {
    const Tensor& x = features.value();
    if (x.rank() != 2) throw Error("subsample: features must be a matrix");
    if (x.rows() < static_cast<std::size_t>(kSubsampleReceptiveField)) throw Error("insufficient frames");
    Var image = g.record(Tensor({1, x.rows(), x.cols()}, x.storage()), {features},
                         [features](Graph& gg, const Tensor&, std::span<const double> dy) {
                           auto d = gg.grad_of(features);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
                         });
    Var h = relu(conv2d(image, g.param(conv1_weight), g.param(conv1_bias), 2));
    h = relu(conv2d(h, g.param(conv2_weight), g.param(conv2_bias), 2));
    return project(g, flatten_channels(h));
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".conv1.weight", conv1_weight);
    f(prefix + ".conv1.bias", conv1_bias);
    f(prefix + ".conv2.weight", conv2_weight);
    f(prefix + ".conv2.bias", conv2_bias);
    project.visit(prefix + ".project", f);
  }
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng) : config_(cfg), subsampling_(cfg, rng), after_norm_(static_cast<std::size_t>(cfg.d_model)) {
    cfg.validate();
    for (int i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg, rng);
  }

  const EncoderConfig& config() const { return config_; }

  /// features: T0 x feature_dim -> frames: T x d_model with
  /// T = ((T0 - 1) / 2 - 1) / 2.
  Var subsample(Graph& g, Var features) {
    if (features.cols() != static_cast<std::size_t>(config_.feature_dim)) throw Error("feature dimension mismatch");
    return subsampling_(g, features);
  }

  /// Whole-sequence encoding under the chunk mask of size `chunk_size`.
  /// chunk_size >= T, or kFullChunk, means full attention.
  Var encode_full(Graph& g, Var frames, long long chunk_size, const ForwardContext& ctx = {}) {
    check_frames(frames);
    const auto t = static_cast<long long>(frames.rows());
    const AttentionMask mask = make_chunk_mask(t, chunk_size == kFullChunk ? t : chunk_size);
    EncoderCache scratch = EncoderCache::fresh(config_);
    return run(g, frames, mask, scratch, ctx);
  }

  /// Encodes one chunk on top of `cache` and extends it. Every frame of
  /// the chunk sees the whole history and the whole chunk.
  Var encode_chunk(Graph& g, Var chunk, EncoderCache& cache, const ForwardContext& ctx = {}) {
    check_frames(chunk);
    if (cache.layers.size() != static_cast<std::size_t>(config_.layers) ||
        cache.d_model != static_cast<std::size_t>(config_.d_model) ||
        cache.conv_kernel != static_cast<std::size_t>(config_.conv_kernel)) {
      throw Error("cache/config mismatch");
    }
    for (const LayerCache& lc : cache.layers) {
      if (lc.keys.rows() != cache.consumed_frames || lc.values.rows() != cache.consumed_frames) {
        throw Error("cache/config mismatch");
      }
    }
    const AttentionMask mask = AttentionMask::all(chunk.rows(), cache.consumed_frames + chunk.rows());
    return run(g, chunk, mask, cache, ctx);
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    subsampling_.visit(prefix + ".subsample", f);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + ".blocks." + std::to_string(i), f);
    after_norm_.visit(prefix + ".after_norm", f);
  }

 private:
  void check_frames(Var frames) const {
    if (frames.value().rank() != 2 || frames.cols() != static_cast<std::size_t>(config_.d_model) || frames.rows() == 0) {
      throw Error("encoder input must be a non-empty T x d_model matrix");
    }
  }

  Var run(Graph& g, Var frames, const AttentionMask& mask, EncoderCache& cache, const ForwardContext& ctx) {
    const std::size_t t = frames.rows();
    const auto d = static_cast<std::size_t>(config_.d_model);
    Var x = add(scale(frames, std::sqrt(static_cast<double>(d))),
                g.constant(sinusoidal_positions(cache.consumed_frames, t, d)));
    x = dropout(x, ctx);
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i](g, x, mask, cache.layers[i], ctx);
    cache.consumed_frames += t;
    return after_norm_(g, x);
  }

  EncoderConfig config_;
  Subsampling subsampling_;
  std::vector<EncoderBlock> blocks_;
  LayerNorm after_norm_;
};

}  // namespace u2
