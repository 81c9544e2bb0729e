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

// Acceptance gate: nine criteria with pinned tolerances, one PASS/FAIL line
// each. Exit status is non-zero when any criterion fails.
//
//   acceptance [--skip-training]
//
// --skip-training leaves out the three-seed training run; criteria 6-8 are
// then evaluated on a model trained for one short epoch and 6 is reported
// as SKIP.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

namespace {

using namespace u2;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  bool skipped = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Sums path probabilities per collapsed label sequence, enumerating all
/// V^T frame paths with an odometer.
std::map<TokenSeq, double> enumerate_marginals(const PosteriorGrid& g) {
  const std::size_t t = g.frames();
  const std::size_t v = g.vocab();
  std::map<TokenSeq, double> out;
  std::vector<std::size_t> path(t, 0);
  while (true) {
    double lp = 0.0;
    TokenSeq labels;
    std::size_t prev = v;
    for (std::size_t i = 0; i < t; ++i) {
      lp += g.data()[i * v + path[i]];
      if (path[i] != 0 && path[i] != prev) labels.push_back(static_cast<int>(path[i]));
      prev = path[i];
    }
    auto [it, fresh] = out.emplace(labels, lp);
    if (!fresh) it->second = log_add(it->second, lp);
    std::size_t i = 0;
    while (i < t && ++path[i] == v) path[i++] = 0;
    if (i == t) break;
  }
  return out;
}

// ---------------------------------------------------------------------------

Verdict criterion1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst_search = 0.0;
  double worst_loss = 0.0;
  std::size_t missing = 0;
  std::size_t losses = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.below(4);
    const std::size_t v = 2 + rng.below(2);
    const PosteriorGrid g = testing::random_grid(t, v, rng, 1.0 + 2.0 * rng.uniform());
    const auto oracle = enumerate_marginals(g);
    std::size_t paths = 1;
    for (std::size_t i = 0; i < t; ++i) paths *= v;
    const auto found = ctc_prefix_beam_search(g, paths, paths);
    if (found.size() != oracle.size()) missing += oracle.size() > found.size() ? oracle.size() - found.size() : 1;
    for (const CtcHypothesis& h : found) {
      const auto it = oracle.find(h.labels);
      if (it == oracle.end()) {
        ++missing;
        continue;
      }
      worst_search = std::max(worst_search, std::abs(h.score - it->second));
    }
    for (const auto& [labels, lp] : oracle) {
      Graph graph(false);
      const Var x = graph.constant(Tensor::matrix(t, v, g.data()));
      worst_loss = std::max(worst_loss, std::abs(ctc_loss(x, labels).item() + lp));
      ++losses;
    }
  }
  const double secs = seconds_since(t0);
  Verdict r;
  r.pass = missing == 0 && worst_search <= 1e-9 && worst_loss <= 1e-9 && secs < 10.0;
  r.detail = "200 grids, " + std::to_string(losses) + " label sequences; max |search - oracle| " +
             fmt("%.2e", worst_search) + ", max |loss + log oracle| " + fmt("%.2e", worst_loss) + ", unmatched " +
             std::to_string(missing) + ", " + fmt("%.2f s", secs);
  return r;
}

Verdict criterion2() {
  const auto t0 = Clock::now();
  Rng rng(202);
  std::ostringstream detail;
  bool pass = true;
  auto report = [&](const char* name, const GradCheckResult& res) {
    pass = pass && res.coords_checked >= 100 && res.max_rel_err <= 1e-4;
    detail << name << " " << fmt("%.2e", res.max_rel_err) << " over " << res.coords_checked << "; ";
  };

  Tensor logits = testing::random_tensor({20, 6}, rng);
  const TokenSeq target{1, 3, 3, 5, 2};
  Tensor* ctc_params[] = {&logits};
  report("ctc_loss", grad_check([&](Graph& g) { return ctc_loss(log_softmax(g.param(logits)), target); }, ctc_params,
                                1e-5, 120, 1));

  ModelConfig mc = testing::tiny_config(7, 2, 8, 2, 6);
  Model m(mc);
  Tensor memory = testing::random_tensor({7, 8}, rng);
  const TokenSeq y_in{5, 1, 4, 2};
  const TokenSeq y_out{1, 4, 2, 5};
  std::vector<Tensor*> dec_params{&memory};
  m.visit_decoder([&dec_params](const std::string&, Tensor& p) { dec_params.push_back(&p); });
  report("decoder cross-entropy",
         grad_check([&](Graph& g) { return smoothed_nll(log_softmax(m.decoder().forward(g, g.param(memory), y_in)), y_out, 0.0); },
                    dec_params, 1e-5, 160, 2));

  SyntheticTaskConfig task;
  task.num_tokens = 4;
  task.feature_dim = 11;
  const Tensor features = SyntheticTask(task).features(3, {2, 4, 4, 1});
  std::vector<Tensor*> all;
  m.visit([&all](const std::string&, Tensor& p) { all.push_back(&p); });
  report("combined_loss", grad_check([&](Graph& g) { return combined_loss(g, m, features, {2, 4, 4, 1}, 2, {0.3, 0.1}).total; },
                                     all, 1e-5, 160, 3));
  const double secs = seconds_since(t0);
  Verdict r;
  r.pass = pass && secs < 60.0;
  detail << fmt("%.2f s", secs);
  r.detail = detail.str();
  return r;
}

Verdict criterion3() {
  const auto t0 = Clock::now();
  Rng rng(303);
  const long long chunks[] = {1, 2, 4, 8, 16};
  double worst_enc = 0.0;
  double worst_dec = 0.0;
  bool same_labels = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 8 * (1 + static_cast<int>(rng.below(2)));
    ModelConfig mc = testing::tiny_config(1000 + static_cast<std::uint64_t>(trial), 1 + static_cast<int>(rng.below(2)), d,
                                          2, 6, 11, 1 + static_cast<int>(rng.below(4)));
    Model m(mc);
    const long long c = chunks[trial % 5];
    const std::size_t t = 1 + rng.below(64);
    const Tensor x = testing::random_matrix(4 * t + 3, 11, rng);

    // encoder: chunk-by-chunk through the cache against one masked pass
    Graph g(false);
    const Tensor sub = m.encoder().subsample(g, g.constant(x)).value();
    const Tensor full = m.encoder().encode_full(g, g.constant(sub), c).value();
    EncoderCache cache = EncoderCache::fresh(mc.encoder);
    for (std::size_t at = 0; at < t; at += static_cast<std::size_t>(c)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(c), t - at);
      Graph gc(false);
      const Tensor y = m.encoder().encode_chunk(gc, gc.constant(sub.slice_rows(at, n)), cache).value();
      for (std::size_t r = 0; r < n; ++r) worst_enc = std::max(worst_enc, testing::max_abs_diff(y.row(r), full.row(at + r)));
    }

    // runtime: a session fed raw audio in random pieces against offline decode
    DecodeOptions opt;
    opt.chunk = c;
    DecodeSession session(m, opt);
    for (std::size_t at = 0; at < x.rows();) {
      const std::size_t n = std::min<std::size_t>(1 + rng.below(4 * static_cast<std::size_t>(c) + 8), x.rows() - at);
      session.push_chunk(x.slice_rows(at, n));
      at += n;
    }
    for (DecodeMode mode : {DecodeMode::kCtcOnly, DecodeMode::kAttention, DecodeMode::kRescoring}) {
      const DecodeResult on = session.finalize(mode);
      const DecodeResult off = offline_decode(m, x, mode, opt);
      if (on.nbest.size() != off.nbest.size()) {
        same_labels = false;
        continue;
      }
      for (std::size_t i = 0; i < on.nbest.size(); ++i) {
        same_labels = same_labels && on.nbest[i].labels == off.nbest[i].labels;
        for (auto [a, b] : {std::pair{on.nbest[i].ctc_score, off.nbest[i].ctc_score},
                            std::pair{on.nbest[i].att_score, off.nbest[i].att_score},
                            std::pair{on.nbest[i].final_score, off.nbest[i].final_score}}) {
          if (a != b) worst_dec = std::max(worst_dec, std::abs(a - b));
        }
      }
    }
  }
  Verdict r;
  r.pass = worst_enc <= 1e-9 && worst_dec <= 1e-9 && same_labels;
  r.detail = "50 models; max encoder diff " + fmt("%.2e", worst_enc) + ", max decode score diff " + fmt("%.2e", worst_dec) +
             (same_labels ? ", identical hypotheses" : ", HYPOTHESES DIFFER") + ", " + fmt("%.2f s", seconds_since(t0));
  return r;
}

Verdict criterion4() {
  Rng rng(404);
  const int n = 10000;
  int full = 0;
  std::vector<int> counts(26, 0);
  bool in_range = true;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double v = rng.uniform();
    const int c = sample_chunk_size(100, ChunkPolicy::dynamic(), u, v);
    if (c == 100) {
      ++full;
    } else if (c >= 1 && c <= 25) {
      ++counts[static_cast<std::size_t>(c)];
    } else {
      in_range = false;
    }
  }
  const double frac = static_cast<double>(full) / n;
  const double expected = static_cast<double>(n - full) / 25.0;
  double chi2 = 0.0;
  for (int c = 1; c <= 25; ++c) {
    const double d = counts[static_cast<std::size_t>(c)] - expected;
    chi2 += d * d / expected;
  }
  const double p = testing::chi_square_sf(chi2, 24);
  Verdict r;
  r.pass = in_range && frac >= 0.47 && frac <= 0.53 && p > 0.01;
  r.detail = "full fraction " + fmt("%.4f", frac) + ", chi2 " + fmt("%.2f", chi2) + " (24 dof, p " + fmt("%.3f", p) + ")";
  return r;
}

Verdict criterion5() {
  // the three reference panels for 8 frames, drawn row by row
  const std::vector<std::pair<long long, std::vector<std::string>>> panels = {
      {8, {"11111111", "11111111", "11111111", "11111111", "11111111", "11111111", "11111111", "11111111"}},
      {1, {"10000000", "11000000", "11100000", "11110000", "11111000", "11111100", "11111110", "11111111"}},
      {4, {"11110000", "11110000", "11110000", "11110000", "11111111", "11111111", "11111111", "11111111"}},
  };
  bool panels_ok = true;
  for (const auto& [c, rows] : panels) {
    const AttentionMask m = make_chunk_mask(8, c);
    for (std::size_t q = 0; q < 8; ++q) {
      for (std::size_t k = 0; k < 8; ++k) panels_ok = panels_ok && m(q, k) == (rows[q][k] == '1');
    }
  }
  int pairs = 0;
  int violations = 0;
  int divisible_violations = 0;
  std::string first;
  for (long long t = 1; t <= 16; ++t) {
    for (long long c1 = 1; c1 <= 16; ++c1) {
      for (long long c2 = c1; c2 <= 16; ++c2) {
        ++pairs;
        const AttentionMask a = make_chunk_mask(t, c1);
        const AttentionMask b = make_chunk_mask(t, c2);
        if (a.subset_of(b)) continue;
        ++violations;
        if (c2 % c1 == 0) ++divisible_violations;
        if (first.empty()) {
          for (std::size_t q = 0; q < static_cast<std::size_t>(t) && first.empty(); ++q) {
            for (std::size_t k = 0; k < static_cast<std::size_t>(t); ++k) {
              if (a(q, k) && !b(q, k)) {
                first = "T=" + std::to_string(t) + " C1=" + std::to_string(c1) + " C2=" + std::to_string(c2) +
                        " q=" + std::to_string(q) + " k=" + std::to_string(k);
                break;
              }
            }
          }
        }
      }
    }
  }
  Verdict r;
  r.pass = panels_ok && violations == 0;
  r.detail = std::string("panels ") + (panels_ok ? "exact" : "MISMATCH") + "; inclusion holds on " +
             std::to_string(pairs - violations) + "/" + std::to_string(pairs) + " (T, C1<=C2) triples";
  if (violations > 0) {
    r.detail += ", first counterexample " + first + "; violations when C1 divides C2: " + std::to_string(divisible_violations);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training-based criteria

struct TrendRun {
  std::uint64_t seed = 0;
  std::map<long long, double> ctc;        // dynamic model, per decode chunk
  std::map<long long, double> rescoring;
  std::map<long long, double> static_rescoring;  // full-attention model
  std::size_t errors_full = 0, errors_one = 0, ref_tokens = 0;
};

const std::vector<long long> kChunks = {kFullChunk, 16, 8, 4, 1};

Model train_model(const Dataset& train, const Dataset& dev, std::uint64_t seed, ChunkPolicy policy, int epochs) {
  ModelConfig mc;
  mc.encoder.feature_dim = train.task.feature_dim;
  mc.decoder.vocab = train.task.vocab_size();
  mc.init_seed = seed;
  Model m(mc);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.chunk_policy = policy;
  cfg.epochs = epochs;
  TrainResult r = Trainer(m, cfg).run(train, dev);
  r.averaged.apply_to(m);
  return m;
}

std::string chunk_row(const std::map<long long, double>& m) {
  std::string s;
  for (long long c : kChunks) s += " " + chunk_label(c) + ":" + fmt("%.4f", m.at(c));
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  bool skip_training = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--skip-training") == 0) {
      skip_training = true;
    } else {
      std::cerr << "usage: acceptance [--skip-training]\n";
      return 2;
    }
  }

  std::vector<Verdict> verdicts(10);
  auto run = [&verdicts](int i, const std::function<Verdict()>& f) {
    try {
      verdicts[static_cast<std::size_t>(i)] = f();
    } catch (const std::exception& e) {
      verdicts[static_cast<std::size_t>(i)] = {false, false, std::string("exception: ") + e.what()};
    }
    std::cerr << "[criterion " << i << " evaluated]\n";
  };
  run(1, criterion1);
  run(2, criterion2);
  run(3, criterion3);
  run(4, criterion4);
  run(5, criterion5);

  // Criterion 6: three seeds, one dynamic-chunk and one full-attention model each.
  const SyntheticTaskConfig task;
  const Dataset train = make_dataset(task, 2000, "train", 1);
  const Dataset dev = make_dataset(task, 200, "dev", 2);
  const Dataset test = make_dataset(task, 200, "test", 3);
  std::optional<Model> reference;
  run(6, [&]() {
    Verdict v;
    if (skip_training) {
      v.skipped = true;
      v.detail = "skipped (--skip-training)";
      return v;
    }
    const auto t0 = Clock::now();
    std::vector<TrendRun> runs;
    for (std::uint64_t seed : {1, 2, 3}) {
      TrendRun tr;
      tr.seed = seed;
      Model dynamic = train_model(train, dev, seed, ChunkPolicy::dynamic(), 20);
      Model full = train_model(train, dev, seed, ChunkPolicy::full(), 20);
      for (const BenchRow& row : bench(dynamic, test, kChunks, {DecodeMode::kCtcOnly, DecodeMode::kRescoring})) {
        (row.mode == DecodeMode::kCtcOnly ? tr.ctc : tr.rescoring)[row.chunk] = row.error_rate;
        if (row.mode == DecodeMode::kRescoring && row.chunk == kFullChunk) {
          tr.errors_full = row.errors;
          tr.ref_tokens = row.ref_tokens;
        }
        if (row.mode == DecodeMode::kRescoring && row.chunk == 1) tr.errors_one = row.errors;
      }
      for (const BenchRow& row : bench(full, test, kChunks, {DecodeMode::kRescoring})) tr.static_rescoring[row.chunk] = row.error_rate;
      std::cerr << "seed " << seed << " dynamic ctc" << chunk_row(tr.ctc) << "\n"
                << "seed " << seed << " dynamic rescoring" << chunk_row(tr.rescoring) << "\n"
                << "seed " << seed << " full-attention rescoring" << chunk_row(tr.static_rescoring) << "\n";
      if (seed == 1) reference.emplace(std::move(dynamic));
      runs.push_back(std::move(tr));
    }
    const double minutes = seconds_since(t0) / 60.0;

    std::size_t full_errors = 0, one_errors = 0;
    bool per_seed = true;
    std::ostringstream d;
    for (const TrendRun& tr : runs) {
      full_errors += tr.errors_full;
      one_errors += tr.errors_one;
      int held = 0;
      for (long long c : kChunks) held += tr.rescoring.at(c) <= tr.ctc.at(c);
      per_seed = per_seed && held >= 4;
      d << "seed " << tr.seed << " rescoring<=ctc on " << held << "/5; ";
    }
    const bool graceful = one_errors <= 2 * full_errors;
    v.pass = graceful && per_seed && minutes <= 30.0;
    d << "chunk-1 errors " << one_errors << " vs 2x full " << 2 * full_errors << " (pooled rescoring); "
      << fmt("%.1f min", minutes);
    v.detail = d.str();
    return v;
  });

  if (!reference) {
    SyntheticTaskConfig quick = task;
    reference.emplace(train_model(make_dataset(quick, 200, "train", 1), Dataset{}, 1, ChunkPolicy::dynamic(), 1));
  }
  Model& model = *reference;
  const Dataset test100{test.task, std::vector<Utterance>(test.utterances.begin(), test.utterances.begin() + 100)};

  run(7, [&]() {
    DecodeOptions opt;  // beam = nbest = attention beam = 10
    const auto rows = bench(model, test100, {16}, {DecodeMode::kAttention, DecodeMode::kRescoring}, opt);
    Verdict v;
    const BenchRow& att = rows[0];
    const BenchRow& res = rows[1];
    v.pass = res.compute_ms < att.compute_ms;
    v.detail = "100 utterances, chunk 16: rescoring " + fmt("%.1f ms", res.compute_ms) + " (rtf " + fmt("%.4f", res.rtf) +
               ") vs attention " + fmt("%.1f ms", att.compute_ms) + " (rtf " + fmt("%.4f", att.rtf) + "), ratio " +
               fmt("%.2f", att.compute_ms / res.compute_ms);
    return v;
  });

  run(8, [&]() {
    const Dataset few{test.task, std::vector<Utterance>(test.utterances.begin(), test.utterances.begin() + 5)};
    const auto rows = bench(model, few, {16}, {DecodeMode::kRescoring});
    const LatencyBounds direct = latency_bounds(16, kSubsampleRate, kFrameShiftMs);
    Verdict v;
    v.pass = rows[0].latency_max_ms == 640.0 && rows[0].latency_avg_ms == 320.0 && direct.max_ms == 640.0 &&
             direct.avg_ms == 320.0;
    v.detail = "bench chunk 16: max " + fmt("%.1f ms", rows[0].latency_max_ms) + ", avg " + fmt("%.1f ms", rows[0].latency_avg_ms);
    return v;
  });

  run(9, [&]() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "u2_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Checkpoint c = Checkpoint::from_model(model, 7, 0.5);
    save_checkpoint(c, dir / "model.ckpt");
    const Checkpoint back = load_checkpoint(dir / "model.ckpt");
    std::size_t values = 0, differing = 0;
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      for (std::size_t e = 0; e < c.params[i].data.size(); ++e) {
        ++values;
        differing += std::bit_cast<std::uint64_t>(c.params[i].data[e]) != std::bit_cast<std::uint64_t>(back.params[i].data[e]);
      }
    }
    const bool meta = back.config == c.config && back.step == c.step && back.dev_loss == c.dev_loss;
    std::size_t beyond_ulp = 0;
    for (std::size_t k : {2u, 3u, 5u, 10u}) {
      const Checkpoint avg = average_checkpoints(std::vector<Checkpoint>(k, back));
      for (std::size_t i = 0; i < c.params.size(); ++i) {
        for (std::size_t e = 0; e < c.params[i].data.size(); ++e) {
          const double x = c.params[i].data[e];
          const double y = avg.params[i].data[e];
          beyond_ulp += !(y == x || y == std::nextafter(x, INFINITY) || y == std::nextafter(x, -INFINITY));
        }
      }
    }
    fs::remove_all(dir);
    Verdict v;
    v.pass = differing == 0 && meta && beyond_ulp == 0;
    v.detail = std::to_string(values) + " values, " + std::to_string(differing) + " bit differences after reload; k in {2,3,5,10} " +
               "averages off by more than one ulp: " + std::to_string(beyond_ulp);
    return v;
  });

  bool all = true;
  for (int i = 1; i <= 9; ++i) {
    const Verdict& v = verdicts[static_cast<std::size_t>(i)];
    const char* tag = v.skipped ? "SKIP" : v.pass ? "PASS" : "FAIL";
    all = all && (v.pass || v.skipped);
    std::cout << "criterion " << i << ": " << tag << "  " << v.detail << "\n";
  }
  return all ? 0 : 1;
}
