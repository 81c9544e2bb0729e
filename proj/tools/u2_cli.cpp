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

// u2: train, decode, stream, bench and average from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "u2/u2.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

long long parse_chunk(const std::string& s) {
  if (s == "full") return u2::kFullChunk;
  std::size_t used = 0;
  long long c = 0;
  try {
    c = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || c < 1) throw u2::Error("chunk must be 'full' or a positive integer, got '" + s + "'");
  return c;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw u2::Error("cannot read " + p.string());
  return json::parse(is);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw u2::Error("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

// Config layout: {"model": ModelConfig, "train": TrainConfig,
// "task": SyntheticTaskConfig, "data": {"train": n, "dev": n, "test": n}
// or {"train_file": path, "dev_file": path}}.
int cmd_train(const fs::path& config_path, const fs::path& out_dir) {
  const json cfg = read_json(config_path);
  u2::ModelConfig mc = cfg.value("model", json::object()).get<u2::ModelConfig>();
  const u2::TrainConfig tc = cfg.value("train", json::object()).get<u2::TrainConfig>();
  const json data = cfg.value("data", json::object());
  fs::create_directories(out_dir);

  u2::Dataset train_set;
  u2::Dataset dev_set;
  if (data.contains("train_file")) {
    train_set = u2::load_dataset(data.at("train_file").get<std::string>());
    dev_set = data.contains("dev_file") ? u2::load_dataset(data.at("dev_file").get<std::string>()) : u2::Dataset{train_set.task, {}};
  } else {
    const u2::SyntheticTaskConfig task = cfg.value("task", json::object()).get<u2::SyntheticTaskConfig>();
    train_set = u2::make_dataset(task, data.value("train", 2000), "train", 1);
    dev_set = u2::make_dataset(task, data.value("dev", 200), "dev", 2);
    const u2::Dataset test_set = u2::make_dataset(task, data.value("test", 200), "test", 3);
    u2::save_dataset(train_set, out_dir / "train.jsonl");
    u2::save_dataset(dev_set, out_dir / "dev.jsonl");
    u2::save_dataset(test_set, out_dir / "test.jsonl");
  }
  mc.encoder.feature_dim = train_set.task.feature_dim;
  mc.decoder.vocab = train_set.task.vocab_size();
  write_json(out_dir / "config.json", {{"model", mc}, {"train", tc}, {"task", train_set.task}});

  u2::Model model(mc);
  std::ofstream metrics(out_dir / "metrics.jsonl");
  u2::Trainer trainer(model, tc);
  trainer.on_step = [&metrics](const u2::StepMetrics& m) { metrics << json(m).dump() << '\n'; };
  trainer.on_epoch = [](int epoch, double dl) { std::fprintf(stderr, "epoch %d dev_loss %.4f\n", epoch, dl); };
  const u2::TrainResult result = trainer.run(train_set, dev_set);

  for (std::size_t i = 0; i < result.kept.size(); ++i) {
    u2::save_checkpoint(result.kept[i], out_dir / ("top" + std::to_string(i + 1) + ".ckpt"));
  }
  u2::save_checkpoint(u2::Checkpoint::from_model(model, result.steps.empty() ? 0 : result.steps.back().step), out_dir / "last.ckpt");
  u2::save_checkpoint(result.averaged, out_dir / "final.ckpt");
  std::fprintf(stderr, "steps %zu skipped %lld averaged %zu checkpoints -> %s\n", result.steps.size(), result.skipped,
               result.kept.size(), (out_dir / "final.ckpt").c_str());
  return 0;
}

json utterance_record(const u2::Utterance& u, const u2::DecodeResult& r) {
  json j = r;
  j["id"] = u.id;
  j["reference"] = u.tokens;
  return j;
}

int cmd_decode(const fs::path& ckpt, const fs::path& data, const std::string& mode, const std::string& chunk, double ctc_weight,
               std::size_t nbest, std::size_t beam) {
  u2::Model model = u2::load_checkpoint(ckpt).to_model();
  const u2::Dataset ds = u2::load_dataset(data);
  u2::SyntheticTask gen(ds.task);
  u2::DecodeOptions opt;
  opt.chunk = parse_chunk(chunk);
  opt.ctc_weight = ctc_weight;
  opt.nbest = nbest;
  opt.beam = std::max(beam, nbest);
  opt.attention_beam = opt.beam;
  const u2::DecodeMode m = u2::parse_mode(mode);
  std::size_t errors = 0;
  std::size_t ref = 0;
  for (const u2::Utterance& u : ds.utterances) {
    const u2::DecodeResult r = u2::offline_decode(model, ds.features(gen, u), m, opt);
    errors += u2::edit_distance(u.tokens, r.transcript);
    ref += u.tokens.size();
    std::cout << utterance_record(u, r).dump() << '\n';
  }
  std::fprintf(stderr, "token error rate %.4f (%zu / %zu)\n", ref ? static_cast<double>(errors) / static_cast<double>(ref) : 0.0,
               errors, ref);
  return 0;
}

int cmd_stream(const fs::path& ckpt, const fs::path& data, long long chunk, bool emit_partials, const std::string& mode,
               double ctc_weight, std::size_t nbest) {
  if (chunk < 1) throw u2::Error("stream needs a positive chunk size");
  u2::Model model = u2::load_checkpoint(ckpt).to_model();
  const u2::Dataset ds = u2::load_dataset(data);
  u2::SyntheticTask gen(ds.task);
  u2::DecodeOptions opt;
  opt.chunk = chunk;
  opt.ctc_weight = ctc_weight;
  opt.nbest = nbest;
  opt.beam = std::max<std::size_t>(opt.beam, nbest);
  const u2::DecodeMode m = u2::parse_mode(mode);
  const auto piece = static_cast<std::size_t>(u2::kSubsampleRate * chunk);
  for (const u2::Utterance& u : ds.utterances) {
    const u2::Tensor x = ds.features(gen, u);
    u2::DecodeSession session(model, opt);
    for (std::size_t at = 0; at < x.rows(); at += piece) {
      const auto partial = session.push_chunk(x.slice_rows(at, std::min(piece, x.rows() - at)));
      if (emit_partials && partial) {
        std::cout << json{{"id", u.id}, {"partial", partial->best}, {"frames", partial->frames}}.dump() << '\n';
      }
    }
    std::cout << utterance_record(u, session.finalize(m)).dump() << '\n';
  }
  return 0;
}

int cmd_bench(const fs::path& ckpt, const fs::path& data, const std::string& chunks, const std::string& modes, double ctc_weight,
              std::size_t nbest, const std::string& format) {
  u2::Model model = u2::load_checkpoint(ckpt).to_model();
  const u2::Dataset ds = u2::load_dataset(data);
  std::vector<long long> cs;
  for (const auto& c : split(chunks, ',')) cs.push_back(parse_chunk(c));
  std::vector<u2::DecodeMode> ms;
  for (const auto& s : split(modes, ',')) ms.push_back(u2::parse_mode(s));
  u2::DecodeOptions opt;
  opt.ctc_weight = ctc_weight;
  opt.nbest = nbest;
  opt.beam = std::max<std::size_t>(opt.beam, nbest);
  opt.attention_beam = opt.beam;
  const auto rows = u2::bench(model, ds, cs, ms, opt);
  if (format == "jsonl") {
    for (const auto& r : rows) std::cout << json(r).dump() << '\n';
    return 0;
  }
  std::printf("chunk\tmode\terr\trtf\tlatency_ms\tlatency_avg_ms\trescore_ms\n");
  for (const auto& r : rows) {
    std::printf("%s\t%s\t%.4f\t%.4f\t%.1f\t%.1f\t%.3f\n", u2::chunk_label(r.chunk).c_str(), u2::mode_name(r.mode), r.error_rate,
                r.rtf, r.latency_max_ms, r.latency_avg_ms, r.rescore_ms);
  }
  return 0;
}

int cmd_average(const std::string& inputs, const fs::path& out) {
  std::vector<fs::path> paths;
  for (const auto& p : split(inputs, ',')) paths.emplace_back(p);
  u2::save_checkpoint(u2::average_checkpoints(paths), out);
  std::fprintf(stderr, "averaged %zu checkpoints -> %s\n", paths.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chunked two-pass recognizer on a synthetic token task"};
  app.require_subcommand(1);

  std::string config, out_dir;
  auto* train = app.add_subcommand("train", "train a model and write checkpoints");
  train->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "output directory")->required();

  std::string ckpt, data, mode = "rescoring", chunk = "full";
  double ctc_weight = 0.5;
  std::size_t nbest = 10, beam = 10;
  auto* decode = app.add_subcommand("decode", "decode a dataset, one JSON record per utterance");
  decode->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  decode->add_option("--data", data)->required()->check(CLI::ExistingFile);
  decode->add_option("--mode", mode)->check(CLI::IsMember({"ctc", "attention", "rescoring"}));
  decode->add_option("--chunk", chunk, "'full' or encoder frames per chunk");
  decode->add_option("--ctc-weight", ctc_weight);
  decode->add_option("--nbest", nbest);
  decode->add_option("--beam", beam);

  long long stream_chunk = 16;
  bool emit_partials = false;
  auto* stream = app.add_subcommand("stream", "chunk-by-chunk decoding through a streaming session");
  stream->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  stream->add_option("--data", data)->required()->check(CLI::ExistingFile);
  stream->add_option("--chunk", stream_chunk)->check(CLI::PositiveNumber);
  stream->add_flag("--emit-partials", emit_partials, "print the first-pass top-1 after every chunk");
  stream->add_option("--mode", mode)->check(CLI::IsMember({"ctc", "attention", "rescoring"}));
  stream->add_option("--ctc-weight", ctc_weight);
  stream->add_option("--nbest", nbest);

  std::string chunks = "full,16,8,4,1", modes = "ctc,attention,rescoring", format = "tsv";
  auto* bench = app.add_subcommand("bench", "error rate, RTF and latency over a chunk sweep");
  bench->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  bench->add_option("--data", data)->required()->check(CLI::ExistingFile);
  bench->add_option("--chunks", chunks);
  bench->add_option("--modes", modes);
  bench->add_option("--ctc-weight", ctc_weight);
  bench->add_option("--nbest", nbest);
  bench->add_option("--format", format)->check(CLI::IsMember({"tsv", "jsonl"}));

  std::string inputs, out_file;
  auto* average = app.add_subcommand("average", "elementwise mean of checkpoints");
  average->add_option("--inputs", inputs, "comma-separated checkpoint manifests")->required();
  average->add_option("--out", out_file)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, out_dir);
    if (*decode) return cmd_decode(ckpt, data, mode, chunk, ctc_weight, nbest, beam);
    if (*stream) return cmd_stream(ckpt, data, stream_chunk, emit_partials, mode, ctc_weight, nbest);
    if (*bench) return cmd_bench(ckpt, data, chunks, modes, ctc_weight, nbest, format);
    if (*average) return cmd_average(inputs, out_file);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
