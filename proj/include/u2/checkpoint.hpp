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

// Checkpoints: a JSON manifest (format version, model config, parameter
// table with name/shape/offset, step, dev loss) next to one blob of
// little-endian f64 values at "<manifest>.bin".

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "u2/model.hpp"
#include "u2/synthetic.hpp"

namespace u2 {

constexpr int kCheckpointFormatVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  ModelConfig config;
  std::vector<NamedArray> params;
  long long step = 0;
  double dev_loss = 0.0;

  static Checkpoint from_model(Model& model, long long step = 0, double dev_loss = 0.0) {
    Checkpoint c;
    c.config = model.config();
    c.step = step;
    c.dev_loss = dev_loss;
    model.visit([&c](const std::string& name, Tensor& t) { c.params.push_back({name, t.shape(), t.storage()}); });
    return c;
  }

  /// Copies every parameter into `model`, which must have the same layout.
  void apply_to(Model& model) const {
    std::size_t i = 0;
    model.visit([this, &i](const std::string& name, Tensor& t) {
      if (i >= params.size() || params[i].name != name || params[i].shape != t.shape()) {
        throw Error("checkpoint does not match model layout at " + name);
      }
      std::copy(params[i].data.begin(), params[i].data.end(), t.data().begin());
      ++i;
    });
    if (i != params.size()) throw Error("checkpoint has extra parameters");
  }

  Model to_model() const {
    Model m(config);
    apply_to(m);
    return m;
  }
};

inline std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest) {
  return manifest.string() + ".bin";
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const NamedArray& p : ckpt.params) {
    table.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
    offset += p.data.size();
  }
  const auto blob = checkpoint_blob_path(path);
  nlohmann::json manifest{{"format_version", ckpt.format_version},
                          {"config", ckpt.config},
                          {"step", ckpt.step},
                          {"dev_loss", ckpt.dev_loss},
                          {"blob", blob.filename().string()},
                          {"count", offset},
                          {"parameters", table}};
  {
    std::ofstream os(path);
    if (!os) throw Error("cannot write checkpoint " + path.string());
    os << manifest.dump(2) << '\n';
  }
  std::ofstream bin(blob, std::ios::binary);
  if (!bin) throw Error("cannot write checkpoint blob " + blob.string());
  for (const NamedArray& p : ckpt.params) detail::write_f64_le(bin, p.data);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  const auto manifest = nlohmann::json::parse(is);
  Checkpoint c;
  c.format_version = manifest.at("format_version").get<int>();
  if (c.format_version != kCheckpointFormatVersion) {
    throw Error("unsupported checkpoint format version " + std::to_string(c.format_version));
  }
  c.config = manifest.at("config").get<ModelConfig>();
  c.step = manifest.value("step", 0LL);
  c.dev_loss = manifest.value("dev_loss", 0.0);
  const auto blob_path = path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw Error("cannot read checkpoint blob " + blob_path.string());
  std::vector<double> all(manifest.at("count").get<std::size_t>());
  detail::read_f64_le(bin, all);
  for (const auto& entry : manifest.at("parameters")) {
    NamedArray p;
    p.name = entry.at("name").get<std::string>();
    p.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(p.shape);
    if (offset + n > all.size()) throw Error("checkpoint parameter table exceeds blob");
    p.data.assign(all.begin() + static_cast<std::ptrdiff_t>(offset), all.begin() + static_cast<std::ptrdiff_t>(offset + n));
    c.params.push_back(std::move(p));
  }
  return c;
}

/// Elementwise mean. Values are sorted per element and averaged as offsets
/// from the smallest, so the result does not depend on input order and k
/// identical inputs come back unchanged.
inline Checkpoint average_checkpoints(const std::vector<Checkpoint>& inputs) {
  if (inputs.empty()) throw Error("incompatible checkpoints");
  const Checkpoint& first = inputs.front();
  for (const Checkpoint& c : inputs) {
    if (!(c.config == first.config) || c.params.size() != first.params.size()) throw Error("incompatible checkpoints");
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (c.params[i].name != first.params[i].name || c.params[i].shape != first.params[i].shape) {
        throw Error("incompatible checkpoints");
      }
    }
  }
  Checkpoint out = first;
  const double k = static_cast<double>(inputs.size());
  std::vector<double> column(inputs.size());
  double dev = 0.0;
  long long step = 0;
  for (const Checkpoint& c : inputs) {
    dev += c.dev_loss;
    step = std::max(step, c.step);
  }
  out.dev_loss = dev / k;
  out.step = step;
  for (std::size_t p = 0; p < out.params.size(); ++p) {
    for (std::size_t e = 0; e < out.params[p].data.size(); ++e) {
      for (std::size_t i = 0; i < inputs.size(); ++i) column[i] = inputs[i].params[p].data[e];
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v - column.front();
      out.params[p].data[e] = column.front() + s / k;
    }
  }
  return out;
}

inline Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  std::vector<Checkpoint> loaded;
  for (const auto& p : paths) loaded.push_back(load_checkpoint(p));
  return average_checkpoints(loaded);
}

}  // namespace u2
