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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "support.hpp"

namespace u2 {
namespace {

namespace fs = std::filesystem;
using testing::tiny_config;

SyntheticTaskConfig small_task(int min_len = 2, int max_len = 4) {
  SyntheticTaskConfig t;
  t.num_tokens = 4;
  t.feature_dim = 11;
  t.frames_per_token = 8;
  t.noise_sigma = 0.3;
  t.min_len = min_len;
  t.max_len = max_len;
  return t;
}

TrainConfig quiet_config() {
  TrainConfig c;
  c.specaug.enabled = false;
  c.dropout = 0.0;
  c.warmup_steps = 10;
  c.epochs = 1;
  return c;
}

bool grad_is_zero(Tensor& t) {
  if (!t.has_grad()) return true;
  for (double g : t.grad()) {
    if (g != 0.0) return false;
  }
  return true;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("u2_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// Loss

TEST(CombinedLoss, SingleBranchWeightsLeaveTheOtherBranchUntouched) {
  Model m(tiny_config(1));
  SyntheticTask task(small_task());
  const Tensor x = task.features(3, {1, 2, 3});
  {
    m.zero_grad();
    Graph g;
    auto terms = combined_loss(g, m, x, {1, 2, 3}, kFullChunk, {1.0, 0.1});
    g.backward(terms.total);
    EXPECT_EQ(terms.aed, 0.0);
    m.visit_decoder([](const std::string& n, Tensor& t) { EXPECT_TRUE(grad_is_zero(t)) << n; });
    bool any = false;
    m.visit_ctc([&any](const std::string&, Tensor& t) { any = any || !grad_is_zero(t); });
    EXPECT_TRUE(any);
  }
  {
    m.zero_grad();
    Graph g;
    auto terms = combined_loss(g, m, x, {1, 2, 3}, kFullChunk, {0.0, 0.1});
    g.backward(terms.total);
    EXPECT_EQ(terms.ctc, 0.0);
    m.visit_ctc([](const std::string& n, Tensor& t) { EXPECT_TRUE(grad_is_zero(t)) << n; });
  }
}

TEST(CombinedLoss, IsTheWeightedSumOfItsBranches) {
  Model m(tiny_config(2));
  SyntheticTask task(small_task());
  const TokenSeq y{2, 2, 4};
  const Tensor x = task.features(5, y);
  for (double lambda : {0.1, 0.3, 0.5, 0.7}) {
    Graph g(false);
    auto terms = combined_loss(g, m, x, y, 2, {lambda, 0.1});
    EXPECT_NEAR(terms.total.item(), lambda * terms.ctc + (1.0 - lambda) * terms.aed, 1e-12);
    EXPECT_GT(terms.ctc, 0.0);
    EXPECT_GT(terms.aed, 0.0);
  }
  Graph g(false);
  EXPECT_THROW(combined_loss(g, m, x, y, 2, {1.5, 0.1}), Error);
}

TEST(CombinedLoss, ReportsInfeasibleTargets) {
  Model m(tiny_config(3));
  SyntheticTask task(small_task());
  const Tensor x = task.features(1, {1});  // 8 raw frames, one encoder frame
  const TokenSeq y{1, 1};
  Graph g;
  EXPECT_FALSE(combined_loss(g, m, x, y, kFullChunk, {0.3, 0.1}).feasible);
  EXPECT_TRUE(combined_loss(g, m, x, y, kFullChunk, {0.0, 0.1}).feasible);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
  Model m(tiny_config(4));
  SyntheticTask task(small_task());
  const TokenSeq y{3, 1, 1};
  const Tensor x = task.features(9, y);
  std::vector<Tensor*> params;
  m.visit([&params](const std::string&, Tensor& t) { params.push_back(&t); });
  const auto r = grad_check(
      [&](Graph& g) { return combined_loss(g, m, x, y, 2, {0.3, 0.1}).total; }, params, 1e-5, 160);
  EXPECT_GE(r.coords_checked, 100u);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

// ---------------------------------------------------------------------------
// Schedule, augmentation, optimizer

TEST(LrSchedule, Examples) {
  const double d = std::pow(256.0, -0.5);
  EXPECT_DOUBLE_EQ(lr_schedule(1, 256, 25000), d * std::pow(25000.0, -1.5));
  EXPECT_DOUBLE_EQ(lr_schedule(25000, 256, 25000), d * std::pow(25000.0, -0.5));
  EXPECT_DOUBLE_EQ(lr_schedule(100000, 256, 25000), d * std::pow(100000.0, -0.5));
  EXPECT_DOUBLE_EQ(lr_schedule(100, 64, 100, 2.0), 2.0 * 0.125 * 0.1);
  for (long long s = 1; s < 400; ++s) {
    if (s < 100) {
      EXPECT_LT(lr_schedule(s, 64, 100), lr_schedule(s + 1, 64, 100));
    } else {
      EXPECT_GT(lr_schedule(s, 64, 100), lr_schedule(s + 1, 64, 100));
    }
  }
  EXPECT_THROW(lr_schedule(0, 64, 100), Error);
  EXPECT_THROW(lr_schedule(1, 64, 0), Error);
}

TEST(SpecAugment, DisabledOrZeroWidthIsIdentity) {
  Rng rng(1);
  const Tensor x = testing::random_matrix(30, 11, rng);
  SpecAugmentConfig off;
  off.enabled = false;
  EXPECT_EQ(spec_augment(x, off, rng).storage(), x.storage());
  SpecAugmentConfig zero;
  zero.F = 0;
  zero.T_mask = 0;
  EXPECT_EQ(spec_augment(x, zero, rng).storage(), x.storage());
}

TEST(SpecAugment, MasksStayWithinTheirBounds) {
  Rng rng(2);
  Tensor x({40, 11});
  for (double& v : x.data()) v = 1.0 + rng.uniform();
  const SpecAugmentConfig cfg;
  bool some = false;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor y = spec_augment(x, cfg, rng);
    std::size_t zero_cols = 0;
    std::size_t zero_rows = 0;
    for (std::size_t c = 0; c < 11; ++c) {
      bool all = true;
      for (std::size_t r = 0; r < 40; ++r) all = all && y(r, c) == 0.0;
      zero_cols += all;
    }
    for (std::size_t r = 0; r < 40; ++r) {
      bool all = true;
      for (std::size_t c = 0; c < 11; ++c) all = all && y(r, c) == 0.0;
      zero_rows += all;
    }
    EXPECT_LE(zero_cols, static_cast<std::size_t>(cfg.num_freq_masks * cfg.F));
    EXPECT_LE(zero_rows, static_cast<std::size_t>(cfg.num_time_masks * cfg.T_mask));
    for (std::size_t r = 0; r < 40; ++r) {
      for (std::size_t c = 0; c < 11; ++c) {
        if (y(r, c) == 0.0) {
          some = true;
        } else {
          EXPECT_EQ(y(r, c), x(r, c));
        }
      }
    }
  }
  EXPECT_TRUE(some);
}

TEST(Adam, FirstStepMovesBySignTimesRate) {
  Tensor w = Tensor::matrix(1, 3);
  w.set_requires_grad(true);
  w.zero_grad();
  w.grad() = {0.5, -2.0, 100.0};
  Tensor* ps[] = {&w};
  Adam adam({ps[0]});
  const double norm = adam.step(0.01);
  EXPECT_NEAR(norm, std::sqrt(0.25 + 4.0 + 10000.0), 1e-12);
  EXPECT_NEAR(w[0], -0.01, 1e-9);
  EXPECT_NEAR(w[1], 0.01, 1e-9);
  EXPECT_NEAR(w[2], -0.01, 1e-9);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, ClippingScalesTheSecondMomentHistory) {
  // Adam is scale-free without clipping. Clipping only the first, large
  // gradient changes the moment ratio seen by the second step.
  auto run = [](double clip, double scale) {
    Tensor w = Tensor::matrix(1, 1);
    w.set_requires_grad(true);
    w.zero_grad();
    Adam adam({&w}, {0.9, 0.98, 1e-9, clip});
    w.grad() = {10.0 * scale};
    adam.step(0.1);
    w.grad() = {-0.1 * scale};
    adam.step(0.1);
    return w[0];
  };
  EXPECT_NEAR(run(0.0, 1.0), run(0.0, 3.0), 1e-9);
  EXPECT_GT(std::abs(run(5.0, 1.0) - run(0.0, 1.0)), 1e-6);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  Model m(tiny_config(5));
  m.visit([](const std::string&, Tensor& t) {
    if (t.size() > 0) t[0] = std::nextafter(1.0 / 3.0, 1.0);
  });
  const Checkpoint c = Checkpoint::from_model(m, 42, 1.25);
  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint(c, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(back.dev_loss, 1.25);
  ASSERT_EQ(back.params.size(), c.params.size());
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    EXPECT_EQ(back.params[i].name, c.params[i].name);
    EXPECT_EQ(back.params[i].shape, c.params[i].shape);
    ASSERT_EQ(back.params[i].data.size(), c.params[i].data.size());
    for (std::size_t k = 0; k < c.params[i].data.size(); ++k) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back.params[i].data[k]), std::bit_cast<std::uint64_t>(c.params[i].data[k]));
    }
  }
  Model restored = back.to_model();
  EXPECT_EQ(Checkpoint::from_model(restored, 42, 1.25).params.size(), c.params.size());
}

TEST(Checkpoint, LoadRejectsTruncatedBlob) {
  Model m(tiny_config(6));
  const fs::path dir = scratch_dir("trunc");
  save_checkpoint(Checkpoint::from_model(m), dir / "a.ckpt");
  fs::resize_file(checkpoint_blob_path(dir / "a.ckpt"), 16);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), Error);
}

TEST(Checkpoint, ApplyRejectsOtherLayouts) {
  Model a(tiny_config(7));
  Model b(tiny_config(7, 1));
  EXPECT_THROW(Checkpoint::from_model(a).apply_to(b), Error);
}

TEST(AverageCheckpoints, OppositeWeightsCancel) {
  Model m(tiny_config(8));
  Checkpoint pos = Checkpoint::from_model(m);
  Checkpoint neg = pos;
  for (auto& p : neg.params) {
    for (double& v : p.data) v = -v;
  }
  for (const auto& p : average_checkpoints(std::vector<Checkpoint>{pos, neg}).params) {
    for (double v : p.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(AverageCheckpoints, IdenticalInputsReproduceTheInput) {
  Model m(tiny_config(9));
  const Checkpoint c = Checkpoint::from_model(m, 3, 2.0);
  for (std::size_t k = 1; k <= 10; ++k) {
    const Checkpoint avg = average_checkpoints(std::vector<Checkpoint>(k, c));
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      for (std::size_t e = 0; e < c.params[i].data.size(); ++e) {
        EXPECT_EQ(avg.params[i].data[e], c.params[i].data[e]) << k;
      }
    }
  }
}

TEST(AverageCheckpoints, IndependentOfInputOrder) {
  Model m(tiny_config(20));
  Rng rng(20);
  std::vector<Checkpoint> cs;
  for (int s = 0; s < 5; ++s) {
    Checkpoint c = Checkpoint::from_model(m, s, s);
    for (auto& p : c.params) {
      for (double& v : p.data) v += rng.normal();
    }
    cs.push_back(std::move(c));
  }
  const Checkpoint a = average_checkpoints(cs);
  std::swap(cs[0], cs[3]);
  std::swap(cs[1], cs[4]);
  const Checkpoint b = average_checkpoints(cs);
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].data, b.params[i].data);
  EXPECT_EQ(a.step, 4);
  EXPECT_EQ(a.dev_loss, 2.0);
}

TEST(AverageCheckpoints, Errors) {
  Model a(tiny_config(10));
  Model b(tiny_config(10, 1));
  try {
    average_checkpoints(std::vector<Checkpoint>{Checkpoint::from_model(a), Checkpoint::from_model(b)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "incompatible checkpoints");
  }
  EXPECT_THROW(average_checkpoints(std::vector<Checkpoint>{}), Error);
}

TEST(AverageCheckpoints, FromFiles) {
  const fs::path dir = scratch_dir("avg");
  Model m(tiny_config(11));
  const Checkpoint a = Checkpoint::from_model(m);
  Checkpoint b = a;
  for (auto& p : b.params) {
    for (double& v : p.data) v = 0.5 - v * v;
  }
  save_checkpoint(a, dir / "a.ckpt");
  save_checkpoint(b, dir / "b.ckpt");
  const Checkpoint disk = average_checkpoints(std::vector<fs::path>{dir / "a.ckpt", dir / "b.ckpt"});
  const Checkpoint mem = average_checkpoints(std::vector<Checkpoint>{a, b});
  for (std::size_t i = 0; i < mem.params.size(); ++i) EXPECT_EQ(disk.params[i].data, mem.params[i].data);
}

// ---------------------------------------------------------------------------
// Data

TEST(Dataset, SaveLoadRoundTrip) {
  SyntheticTaskConfig task = small_task();
  task.successors = 2;
  const Dataset ds = make_dataset(task, 12, "utt", 3);
  const SyntheticTask gen(task);
  for (bool sidecar : {false, true}) {
    const fs::path dir = scratch_dir(sidecar ? "ds_sidecar" : "ds");
    save_dataset(ds, dir / "d.jsonl", sidecar);
    const Dataset back = load_dataset(dir / "d.jsonl");
    EXPECT_EQ(back.task, task);
    ASSERT_EQ(back.utterances.size(), ds.utterances.size());
    for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
      EXPECT_EQ(back.utterances[i].id, "utt-" + std::to_string(i));
      EXPECT_EQ(back.utterances[i].seed, ds.utterances[i].seed);
      EXPECT_EQ(back.utterances[i].tokens, ds.utterances[i].tokens);
      EXPECT_EQ(back.utterances[i].features.has_value(), sidecar);
      EXPECT_EQ(back.features(gen, back.utterances[i]).storage(), ds.features(gen, ds.utterances[i]).storage());
    }
  }
}

TEST(SyntheticTask, TranscriptsFollowTheSuccessorTable) {
  SyntheticTaskConfig cfg;
  cfg.successors = 3;
  const SyntheticTask task(cfg);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const TokenSeq y = task.sample_transcript(rng);
    ASSERT_GE(y.size(), static_cast<std::size_t>(cfg.min_len));
    ASSERT_LE(y.size(), static_cast<std::size_t>(cfg.max_len));
    for (std::size_t k = 1; k < y.size(); ++k) {
      const auto next = task.successors(y[k - 1]);
      EXPECT_TRUE(std::find(next.begin(), next.end(), y[k]) != next.end());
    }
  }
  EXPECT_THROW(task.features(1, {17}), Error);
  EXPECT_EQ(task.features(1, {1, 2}).rows(), 16u);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Trainer, CtcOnlyRunMatchesAPlainLoop) {
  const Dataset train = make_dataset(small_task(), 4, "tr", 1);
  TrainConfig cfg = quiet_config();
  cfg.lambda_ctc = 1.0;
  cfg.chunk_policy = ChunkPolicy::full();
  cfg.batch_size = 4;
  cfg.epochs = 2;

  Model trained(tiny_config(13));
  Trainer(trained, cfg).run(train, Dataset{});

  Model ref(tiny_config(13));
  std::vector<Tensor*> params;
  ref.visit([&params](const std::string&, Tensor& t) { params.push_back(&t); });
  Adam adam(params, {0.9, 0.98, 1e-9, 5.0});
  const SyntheticTask gen(train.task);
  for (long long step = 1; step <= 2; ++step) {
    ref.zero_grad();
    for (const Utterance& u : train.utterances) {
      Graph g;
      Var states = ref.encoder().encode_full(g, ref.encoder().subsample(g, g.constant(gen.features(u.seed, u.tokens))),
                                             kFullChunk);
      g.backward(scale(ctc_loss(ref.ctc_log_probs(g, states), u.tokens), 0.25));
    }
    adam.step(lr_schedule(step, tiny_config().encoder.d_model, cfg.warmup_steps));
  }

  const Checkpoint a = Checkpoint::from_model(trained);
  const Checkpoint b = Checkpoint::from_model(ref);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_LE(testing::max_abs_diff(a.params[i].data, b.params[i].data), 1e-9) << a.params[i].name;
  }
}

TEST(Trainer, SameSeedGivesIdenticalMetricLogs) {
  const Dataset train = make_dataset(small_task(), 10, "tr", 2);
  const Dataset dev = make_dataset(small_task(), 3, "dev", 3);
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.epochs = 2;
  cfg.warmup_steps = 5;
  auto log = [&](std::uint64_t seed) {
    TrainConfig c = cfg;
    c.seed = seed;
    Model m(tiny_config(14));
    Trainer t(m, c);
    std::vector<std::string> lines;
    t.on_step = [&lines](const StepMetrics& s) { lines.push_back(nlohmann::json(s).dump()); };
    const TrainResult r = t.run(train, dev);
    lines.push_back(nlohmann::json(r.dev_losses).dump());
    return lines;
  };
  const auto a = log(1);
  EXPECT_EQ(a.size(), 9u);
  EXPECT_EQ(a, log(1));
  EXPECT_NE(a, log(2));
}

TEST(Trainer, ChunkSizesFollowThePolicyOverAThousandSteps) {
  // every utterance has 6 tokens -> 48 raw frames -> 11 encoder frames
  const Dataset train = make_dataset(small_task(6, 6), 50, "tr", 4);
  TrainConfig cfg = quiet_config();
  cfg.batch_size = 1;
  cfg.epochs = 20;
  cfg.keep_top = 1;
  Model m(tiny_config(15, 1, 4, 1));
  Trainer t(m, cfg);
  std::map<int, int> counts;
  t.on_step = [&counts](const StepMetrics& s) { ++counts[s.chunk_size]; };
  const TrainResult r = t.run(train, Dataset{});
  ASSERT_EQ(r.steps.size(), 1000u);
  EXPECT_EQ(counts.begin()->first, 1);
  EXPECT_EQ(counts.rbegin()->first, 11);
  EXPECT_EQ(counts.size(), 11u);
  const double full = counts[11] / 1000.0;
  EXPECT_GE(full, 0.44);
  EXPECT_LE(full, 0.56);
  const double expected = (1000.0 - counts[11]) / 10.0;
  double chi2 = 0.0;
  for (int c = 1; c <= 10; ++c) chi2 += (counts[c] - expected) * (counts[c] - expected) / expected;
  EXPECT_GT(testing::chi_square_sf(chi2, 9), 0.01);
}

TEST(Trainer, StaticAndFullPoliciesAreConstant) {
  const Dataset train = make_dataset(small_task(6, 6), 6, "tr", 5);
  TrainConfig cfg = quiet_config();
  cfg.batch_size = 2;
  for (auto [policy, want] : std::vector<std::pair<ChunkPolicy, int>>{{ChunkPolicy::fixed(4), 4}, {ChunkPolicy::full(), 11}}) {
    cfg.chunk_policy = policy;
    Model m(tiny_config(16, 1));
    for (const StepMetrics& s : Trainer(m, cfg).run(train, Dataset{}).steps) EXPECT_EQ(s.chunk_size, want);
  }
}

TEST(Trainer, SkipsUtterancesTooShortForCtc) {
  SyntheticTaskConfig task = small_task(4, 4);
  task.frames_per_token = 4;  // 16 raw frames -> 2 encoder frames for 4 tokens
  const Dataset train = make_dataset(task, 5, "tr", 6);
  TrainConfig cfg = quiet_config();
  cfg.batch_size = 5;
  Model m(tiny_config(17, 1));
  EXPECT_EQ(Trainer(m, cfg).run(train, Dataset{}).skipped, 5);
  cfg.lambda_ctc = 0.0;
  Model m2(tiny_config(17, 1));
  EXPECT_EQ(Trainer(m2, cfg).run(train, Dataset{}).skipped, 0);
}

TEST(Trainer, NonFiniteLossNamesTheStep) {
  const Dataset train = make_dataset(small_task(), 3, "tr", 7);
  Model m(tiny_config(18, 1));
  m.visit([](const std::string& n, Tensor& t) {
    if (n == "ctc.bias") t[1] = std::numeric_limits<double>::quiet_NaN();
  });
  try {
    Trainer(m, quiet_config()).run(train, Dataset{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("non-finite loss at step 1", 0), 0u) << e.what();
  }
}

TEST(Trainer, KeepsTheBestCheckpointsAndAveragesThem) {
  const Dataset train = make_dataset(small_task(), 8, "tr", 8);
  const Dataset dev = make_dataset(small_task(), 4, "dev", 9);
  TrainConfig cfg = quiet_config();
  cfg.batch_size = 4;
  cfg.epochs = 5;
  cfg.keep_top = 3;
  Model m(tiny_config(19, 1));
  const TrainResult r = Trainer(m, cfg).run(train, dev);
  ASSERT_EQ(r.kept.size(), 3u);
  ASSERT_EQ(r.dev_losses.size(), 5u);
  auto sorted = r.dev_losses;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.kept[i].dev_loss, sorted[i]);
  const Checkpoint avg = average_checkpoints(r.kept);
  for (std::size_t i = 0; i < avg.params.size(); ++i) EXPECT_EQ(r.averaged.params[i].data, avg.params[i].data);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.lambda_ctc = 0.5;
  c.chunk_policy = ChunkPolicy::fixed(8);
  c.specaug.F = 3;
  c.seed = 99;
  const TrainConfig back = nlohmann::json(c).get<TrainConfig>();
  EXPECT_EQ(back.lambda_ctc, 0.5);
  EXPECT_EQ(back.chunk_policy.mode, ChunkMode::kStatic);
  EXPECT_EQ(back.chunk_policy.static_chunk, 8);
  EXPECT_EQ(back.specaug, c.specaug);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_FALSE(nlohmann::json::parse(R"({"specaug": false})").get<TrainConfig>().specaug.enabled);
  EXPECT_THROW(nlohmann::json::parse(R"({"chunk_policy": {"mode": "sideways"}})").get<TrainConfig>(), Error);
  TrainConfig bad;
  bad.lambda_ctc = -0.1;
  EXPECT_THROW(bad.validate(), Error);
  bad = TrainConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), Error);
}

}  // namespace
}  // namespace u2
