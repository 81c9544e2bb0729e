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

// The joint model: shared encoder, CTC head and attention decoder.

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "u2/aed.hpp"
#include "u2/ctc.hpp"
#include "u2/encoder.hpp"

namespace u2 {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::uint64_t init_seed = 1;

  int vocab() const { return decoder.vocab; }

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (decoder.d_model != encoder.d_model) throw Error("decoder d_model must match encoder d_model");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"layers", c.layers},           {"heads", c.heads},
       {"d_model", c.d_model},         {"d_ff", c.d_ff},
       {"conv_kernel", c.conv_kernel}, {"subsample_kernel", c.subsample_kernel},
       {"subsample_stride", c.subsample_stride}, {"feature_dim", c.feature_dim}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
  c.subsample_kernel = j.value("subsample_kernel", c.subsample_kernel);
  c.subsample_stride = j.value("subsample_stride", c.subsample_stride);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
}

inline void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = {{"layers", c.layers}, {"heads", c.heads}, {"d_model", c.d_model}, {"d_ff", c.d_ff}, {"vocab", c.vocab}};
}

inline void from_json(const nlohmann::json& j, DecoderConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab = j.value("vocab", c.vocab);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"decoder", c.decoder}, {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("decoder")) c.decoder = j.at("decoder").get<DecoderConfig>();
  c.init_seed = j.value("init_seed", c.init_seed);
}

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : config_(cfg) {
    cfg.validate();
    Rng rng(cfg.init_seed);
    encoder_ = Encoder(cfg.encoder, rng);
    ctc_head_ = Linear(static_cast<std::size_t>(cfg.encoder.d_model), static_cast<std::size_t>(cfg.vocab()), rng);
    decoder_ = Decoder(cfg.decoder, rng);
  }

  const ModelConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }
  Linear& ctc_head() { return ctc_head_; }

  /// Frame log-posteriors of the CTC branch, T x V.
  Var ctc_log_probs(Graph& g, Var states) { return log_softmax(ctc_head_(g, states)); }

  void visit(const ParamVisitor& f) {
    encoder_.visit("encoder", f);
    ctc_head_.visit("ctc", f);
    decoder_.visit("decoder", f);
  }

  void visit_encoder(const ParamVisitor& f) { encoder_.visit("encoder", f); }
  void visit_ctc(const ParamVisitor& f) { ctc_head_.visit("ctc", f); }
  void visit_decoder(const ParamVisitor& f) { decoder_.visit("decoder", f); }

  std::vector<std::pair<std::string, Tensor*>> parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit([&out](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&n](const std::string&, Tensor& t) { n += t.size(); });
    return n;
  }

  void zero_grad() {
    visit([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

 private:
  ModelConfig config_;
  Encoder encoder_;
  Linear ctc_head_;
  Decoder decoder_;
};

}  // namespace u2
