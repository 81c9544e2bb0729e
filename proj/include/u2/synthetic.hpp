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

// Synthetic recognition task and the line-oriented dataset files that
// describe it.
//
// Each token owns a fixed random pattern of frames_per_token x feature_dim
// values; an utterance is its tokens' patterns laid end to end plus
// Gaussian noise drawn from the utterance seed. Features are therefore a
// pure function of (task seed, utterance seed, transcript) and datasets are
// stored as transcripts only, unless a sidecar feature file is attached.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "u2/ctc.hpp"
#include "u2/numerics/random.hpp"
#include "u2/numerics/tensor.hpp"

namespace u2 {

struct SyntheticTaskConfig {
  int num_tokens = 16;  // real tokens, ids 1..num_tokens
  int feature_dim = 16;
  int frames_per_token = 8;
  double noise_sigma = 2.5;
  int min_len = 3;
  int max_len = 12;
  int successors = 4;  // allowed next tokens per token; 0 means any token may follow
  std::uint64_t seed = 7;

  /// blank + real tokens + shared sos/eos
  int vocab_size() const { return num_tokens + 2; }

  bool operator==(const SyntheticTaskConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const SyntheticTaskConfig& c) {
  j = {{"num_tokens", c.num_tokens}, {"feature_dim", c.feature_dim}, {"frames_per_token", c.frames_per_token},
       {"noise_sigma", c.noise_sigma}, {"min_len", c.min_len},         {"max_len", c.max_len},
       {"successors", c.successors},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticTaskConfig& c) {
  c.num_tokens = j.value("num_tokens", c.num_tokens);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.frames_per_token = j.value("frames_per_token", c.frames_per_token);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.successors = j.value("successors", c.successors);
  c.seed = j.value("seed", c.seed);
}

class SyntheticTask {
 public:
  explicit SyntheticTask(const SyntheticTaskConfig& cfg) : config_(cfg) {
    if (cfg.num_tokens < 1 || cfg.feature_dim < 1 || cfg.frames_per_token < 1) throw Error("invalid synthetic task");
    if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) throw Error("invalid transcript length range");
    Rng rng(mix_seed(cfg.seed, 0x70726f746fULL));
    const auto rows = static_cast<std::size_t>(cfg.frames_per_token);
    const auto cols = static_cast<std::size_t>(cfg.feature_dim);
    prototypes_.emplace_back(Tensor::matrix(rows, cols));  // blank slot, unused
    for (int tok = 1; tok <= cfg.num_tokens; ++tok) {
      Tensor p = Tensor::matrix(rows, cols);
      for (double& v : p.data()) v = rng.normal();
      prototypes_.push_back(std::move(p));
    }
    if (cfg.successors < 0 || cfg.successors > cfg.num_tokens) throw Error("successors must be in [0, num_tokens]");
    if (cfg.successors > 0) {
      Rng lm(mix_seed(cfg.seed, 0x626967726dULL));
      successors_.resize(static_cast<std::size_t>(cfg.num_tokens) + 1);
      for (int tok = 1; tok <= cfg.num_tokens; ++tok) {
        std::vector<int> all(static_cast<std::size_t>(cfg.num_tokens));
        for (int i = 0; i < cfg.num_tokens; ++i) all[static_cast<std::size_t>(i)] = i + 1;
        for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[lm.below(i)]);
        all.resize(static_cast<std::size_t>(cfg.successors));
        std::sort(all.begin(), all.end());
        successors_[static_cast<std::size_t>(tok)] = std::move(all);
      }
    }
  }

  const SyntheticTaskConfig& config() const { return config_; }
  const Tensor& prototype(int token) const { return prototypes_.at(static_cast<std::size_t>(token)); }

  Tensor features(std::uint64_t utterance_seed, const TokenSeq& transcript) const {
    const auto fpt = static_cast<std::size_t>(config_.frames_per_token);
    const auto dim = static_cast<std::size_t>(config_.feature_dim);
    Tensor out = Tensor::matrix(transcript.size() * fpt, dim);
    Rng noise(mix_seed(config_.seed, utterance_seed));
    for (std::size_t i = 0; i < transcript.size(); ++i) {
      const int tok = transcript[i];
      if (tok < 1 || tok > config_.num_tokens) throw Error("transcript token out of range");
      const Tensor& p = prototypes_[static_cast<std::size_t>(tok)];
      for (std::size_t r = 0; r < fpt; ++r) {
        for (std::size_t c = 0; c < dim; ++c) out(i * fpt + r, c) = p(r, c) + config_.noise_sigma * noise.normal();
      }
    }
    return out;
  }

  /// Tokens that may follow `token`, ascending; every token when unrestricted.
  std::vector<int> successors(int token) const {
    if (!successors_.empty()) return successors_.at(static_cast<std::size_t>(token));
    std::vector<int> all(static_cast<std::size_t>(config_.num_tokens));
    for (int i = 0; i < config_.num_tokens; ++i) all[static_cast<std::size_t>(i)] = i + 1;
    return all;
  }

  /// Uniform length in [min_len, max_len]; the first token is uniform and
  /// each later one uniform over its predecessor's successors.
  TokenSeq sample_transcript(Rng& rng) const {
    const auto span = static_cast<std::uint64_t>(config_.max_len - config_.min_len + 1);
    const auto len = static_cast<std::size_t>(config_.min_len) + rng.below(span);
    TokenSeq out(len);
    for (std::size_t i = 0; i < len; ++i) {
      if (i == 0 || successors_.empty()) {
        out[i] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(config_.num_tokens)));
      } else {
        const auto& next = successors_[static_cast<std::size_t>(out[i - 1])];
        out[i] = next[rng.below(next.size())];
      }
    }
    return out;
  }

 private:
  SyntheticTaskConfig config_;
  std::vector<Tensor> prototypes_;
  std::vector<std::vector<int>> successors_;  // indexed by token, empty when unrestricted
};

struct Utterance {
  std::string id;
  std::uint64_t seed = 0;
  TokenSeq tokens;
  std::optional<Tensor> features;  // from a sidecar file, when given
};

namespace detail {

inline void write_f64_le(std::ostream& os, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffU);
    os.write(bytes, 8);
  }
}

inline void read_f64_le(std::istream& is, std::span<double> values) {
  for (double& v : values) {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    if (!is) throw Error("truncated binary data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
}

}  // namespace detail

/// A task description plus utterance records. On disk: JSON lines, the
/// first holding {"task": {...}}, then one {"id", "seed", "tokens"} record
/// per utterance, optionally with {"features": <file>, "frames": T0} naming
/// a raw little-endian f64 sidecar of T0 x feature_dim values.
struct Dataset {
  SyntheticTaskConfig task;
  std::vector<Utterance> utterances;

  Tensor features(const SyntheticTask& gen, const Utterance& u) const {
    return u.features ? *u.features : gen.features(u.seed, u.tokens);
  }
};

inline Dataset make_dataset(const SyntheticTaskConfig& task, std::size_t count, const std::string& prefix,
                            std::uint64_t seed) {
  SyntheticTask gen(task);
  Rng rng(mix_seed(task.seed, seed));
  Dataset ds{task, {}};
  for (std::size_t i = 0; i < count; ++i) {
    Utterance u;
    u.id = prefix + "-" + std::to_string(i);
    u.seed = rng.next_u64();
    u.tokens = gen.sample_transcript(rng);
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

/// Writes `ds` to `path`. With `sidecar_features`, every utterance's
/// features are also written to "<path>.<index>.f64" and referenced.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path, bool sidecar_features = false) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write dataset " + path.string());
  os << nlohmann::json{{"task", ds.task}}.dump() << '\n';
  SyntheticTask gen(ds.task);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    const Utterance& u = ds.utterances[i];
    nlohmann::json rec{{"id", u.id}, {"seed", u.seed}, {"tokens", u.tokens}};
    if (sidecar_features) {
      const Tensor f = ds.features(gen, u);
      const std::string name = path.filename().string() + "." + std::to_string(i) + ".f64";
      std::ofstream bin(path.parent_path() / name, std::ios::binary);
      detail::write_f64_le(bin, f.data());
      rec["features"] = name;
      rec["frames"] = f.rows();
    }
    os << rec.dump() << '\n';
  }
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read dataset " + path.string());
  Dataset ds;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (!header) {
      if (!j.contains("task")) throw Error("dataset header must hold the task description");
      ds.task = j.at("task").get<SyntheticTaskConfig>();
      header = true;
      continue;
    }
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.seed = j.value("seed", std::uint64_t{0});
    u.tokens = j.at("tokens").get<TokenSeq>();
    if (j.contains("features")) {
      const auto frames = j.at("frames").get<std::size_t>();
      Tensor f = Tensor::matrix(frames, static_cast<std::size_t>(ds.task.feature_dim));
      std::ifstream bin(path.parent_path() / j.at("features").get<std::string>(), std::ios::binary);
      if (!bin) throw Error("missing feature sidecar for " + u.id);
      detail::read_f64_le(bin, f.data());
      u.features = std::move(f);
    }
    ds.utterances.push_back(std::move(u));
  }
  if (!header) throw Error("empty dataset file " + path.string());
  return ds;
}

}  // namespace u2
