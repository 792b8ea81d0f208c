// Copyright 2026 The MDDM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mddm/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "fixtures.hpp"
#include "mddm/errors.hpp"
#include "mddm/pipeline.hpp"

namespace mddm {
namespace {

namespace fs = std::filesystem;

std::string TempPath(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

std::string ReadBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig SmallRun() {
  RunConfig c;
  c.train.batch_size = 8;
  c.train.total_steps = 100;
  c.train.warmup_steps = 10;
  c.train.cycle_length = 100;
  c.train.seed = 5;
  return c;
}

bool SameParams(const TrainState& a, const TrainState& b) {
  auto eq = [](auto x, auto y) { return std::equal(x.begin(), x.end(), y.begin(), y.end()); };
  return eq(a.params.values(), b.params.values()) && eq(std::span(a.adam_m), std::span(b.adam_m)) &&
         eq(std::span(a.adam_v), std::span(b.adam_v)) && a.step == b.step;
}

TEST(PairwiseSumTest, MatchesExactSum) {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(pairwise_sum(v), 500500.0);
  EXPECT_EQ(pairwise_sum(std::vector<double>{}), 0.0);
}

// All-zero parameters give zero logits, i.e. a uniform distribution over the
// k_total real tokens.
TEST(LossTest, UniformLogitsClosedForm) {
  const auto config = fixtures::tiny_config(AdaLNMode::kAdaLNZero);
  const ParameterSet<double> params(config);
  const auto vocab = fixtures::tiny_vocab();
  const auto cc = fixtures::grad_check_case();
  const NoiseSchedule schedule;
  Workspace<double> ws;
  const auto rep = masked_loss<double>(params, cc.x0, cc.xt, cc.t, schedule, vocab, {}, ws);
  double mean = 0.0;
  for (std::size_t b = 0; b < cc.x0.size(); ++b) {
    const int m = static_cast<int>(std::count(cc.xt[b].ids.begin(), cc.xt[b].ids.end(), vocab.mask_id()));
    EXPECT_EQ(rep.masked_counts[b], m);
    const double expected = (1.0 / cc.t[b]) * (m / 6.0) * std::log(5.0);
    EXPECT_NEAR(rep.per_example[b], expected, 1e-12);
    mean += expected / 3.0;
  }
  EXPECT_NEAR(rep.loss, mean, 1e-12);
}

TEST(LossTest, NothingMaskedIsZero) {
  const auto config = fixtures::tiny_config(AdaLNMode::kAdaLN);
  const auto params = fixtures::random_params<double>(config, 1);
  const auto vocab = fixtures::tiny_vocab();
  const auto cc = fixtures::grad_check_case();
  std::vector<double> grads(params.size(), 0.0);
  Workspace<double> ws;
  const std::vector<double> t{1e-9};
  const std::vector<TokenSequence> x{cc.x0[0]};
  const auto rep = masked_loss<double>(params, x, x, t, NoiseSchedule(), vocab, grads, ws);
  EXPECT_EQ(rep.loss, 0.0);
  for (double g : grads) ASSERT_EQ(g, 0.0);

  // Tiny t through the sampling path masks nothing either.
  Rng rng(2);
  const NoiseSchedule schedule;
  const auto xt = corrupt(cc.x0[0], 1e-12, schedule, vocab, rng);
  EXPECT_EQ(xt, cc.x0[0]);
}

TEST(LossTest, NelboLossSamplesTimesInRange) {
  const auto config = fixtures::tiny_config(AdaLNMode::kAdaLNZero);
  const auto params = fixtures::random_params<float>(config, 1);
  const auto cc = fixtures::grad_check_case();
  Rng rng(3);
  Workspace<float> ws;
  const NoiseSchedule schedule;
  const auto rep = nelbo_loss<float>(params, cc.x0, schedule, fixtures::tiny_vocab(), rng, {}, ws);
  ASSERT_EQ(rep.t.size(), 3u);
  for (double t : rep.t) {
    EXPECT_GE(t, schedule.t_min());
    EXPECT_LE(t, 1.0);
  }
  EXPECT_TRUE(std::isfinite(rep.loss));
}

TEST(LrTest, ScheduleBoundaries) {
  TrainConfig c;
  c.base_lr = 1e-3;
  c.warmup_steps = 100;
  c.cycle_length = 1000;
  c.min_lr_fraction = 0.1;
  EXPECT_EQ(lr_at(c, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(c, 50), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(c, 100), 1e-3);
  EXPECT_EQ(lr_at(c, 1000), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(c, 1100), 1e-3);
  // Halfway through the decay: floor + (base - floor) / 2.
  EXPECT_NEAR(lr_at(c, 550), 1e-4 + 0.5 * 9e-4, 1e-15);
  EXPECT_NEAR(lr_at(c, 999), 1e-4, 1e-8);
}

TEST(OptimizerTest, ZeroGradientAppliesOnlyWeightDecay) {
  TrainConfig c;
  c.weight_decay = 0.1;
  std::vector<float> p{1.0f, -2.0f, 0.5f}, m(3, 0.0f), v(3, 0.0f), g(3, 0.0f);
  const std::vector<float> before = p;
  adamw_update(p, m, v, g, c, 0.01, 0);
  for (int i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(p[i], static_cast<float>(before[i] - 0.01 * 0.1 * before[i]));
  c.weight_decay = 0.0;
  adamw_update(p, m, v, g, c, 0.01, 1);
  for (int i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(p[i], static_cast<float>(before[i] * (1 - 0.001)));
}

TEST(OptimizerTest, ClipToUnitNorm) {
  std::vector<float> g{6.0f, 8.0f};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 10.0);
  EXPECT_NEAR(std::hypot(static_cast<double>(g[0]), static_cast<double>(g[1])), 1.0, 1e-7);
  Rng rng(4);
  std::vector<double> gd(50);
  for (auto& x : gd) x = rng.normal();
  const double norm = std::sqrt(std::inner_product(gd.begin(), gd.end(), gd.begin(), 0.0));
  for (auto& x : gd) x *= 10.0 / norm;
  EXPECT_NEAR(clip_grad_norm(std::span<double>(gd), 1.0), 10.0, 1e-12);
  EXPECT_NEAR(std::sqrt(std::inner_product(gd.begin(), gd.end(), gd.begin(), 0.0)), 1.0, 1e-12);
  std::vector<float> small{0.3f, 0.4f};
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small, (std::vector<float>{0.3f, 0.4f}));
}

TEST(TrainTest, DeterministicAcrossRuns) {
  const auto config = SmallRun();
  const auto a = train_model(config);
  const auto b = train_model(config);
  EXPECT_EQ(a.step, 100);
  EXPECT_TRUE(SameParams(a, b));
}

TEST(TrainTest, LossDecreases) {
  auto config = SmallRun();
  config.train.batch_size = 32;
  config.train.total_steps = 300;
  config.train.cycle_length = 300;
  std::vector<double> losses;
  TrainOptions options;
  options.on_step = [&](std::int64_t, const StepReport& r) { losses.push_back(r.loss); };
  train_model(config, options);
  const double first = std::accumulate(losses.begin(), losses.begin() + 30, 0.0) / 30;
  const double last = std::accumulate(losses.end() - 30, losses.end(), 0.0) / 30;
  EXPECT_LT(last, 0.8 * first);
}

TEST(TrainTest, NonFiniteLossThrows) {
  auto config = SmallRun();
  auto state = init_train_state(config.backbone, 1);
  for (auto& v : state.params.tensor("head.b")) v = std::numeric_limits<float>::quiet_NaN();
  const World world(config.world_config());
  const auto batch = make_batch(world, 1, 0, 8);
  EXPECT_THROW(train_step(state, batch, config), NumericalError);
}

TEST(CheckpointTest, RoundTripIsBitwise) {
  const auto config = SmallRun();
  TrainState state = init_train_state(config.backbone, config.train.seed);
  run_training(state, config, {.out_dir = "", .stop_at = 7, .on_step = {}});
  const auto path = TempPath("mddm_ckpt_roundtrip.mddm");
  save_checkpoint(state, config, path);
  const auto loaded = load_checkpoint(path);
  EXPECT_TRUE(SameParams(state, loaded.state));
  EXPECT_EQ(loaded.state.seed, state.seed);
  EXPECT_EQ(config_hash(loaded.config), config_hash(config));
  const auto path2 = TempPath("mddm_ckpt_roundtrip2.mddm");
  save_checkpoint(loaded.state, loaded.config, path2);
  EXPECT_EQ(ReadBytes(path), ReadBytes(path2));
  fs::remove(path);
  fs::remove(path2);
}

TEST(CheckpointTest, RejectsCorruptFiles) {
  const auto config = SmallRun();
  const auto state = init_train_state(config.backbone, 0);
  const auto path = TempPath("mddm_ckpt_bad.mddm");
  save_checkpoint(state, config, path);
  const std::string good = ReadBytes(path);
  auto write = [&](const std::string& bytes) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  };
  std::string bad = good;
  bad[0] = 'X';
  write(bad);
  EXPECT_THROW(load_checkpoint(path), IoError);

  bad = good;
  bad[4] = 9;  // version
  write(bad);
  EXPECT_THROW(load_checkpoint(path), IoError);

  write(good.substr(0, good.size() - 5));
  EXPECT_THROW(load_checkpoint(path), IoError);

  write(good + std::string(3, '\0'));
  EXPECT_THROW(load_checkpoint(path), IoError);

  EXPECT_THROW(load_checkpoint(TempPath("mddm_no_such_file.mddm")), IoError);
  fs::remove(path);
}

TEST(CheckpointTest, ResumeMatchesUninterrupted) {
  const auto config = SmallRun();
  TrainState straight = init_train_state(config.backbone, config.train.seed);
  run_training(straight, config, {.out_dir = "", .stop_at = 15, .on_step = {}});

  TrainState first = init_train_state(config.backbone, config.train.seed);
  run_training(first, config, {.out_dir = "", .stop_at = 5, .on_step = {}});
  const auto path = TempPath("mddm_ckpt_resume.mddm");
  save_checkpoint(first, config, path);
  auto resumed = load_checkpoint(path).state;
  run_training(resumed, config, {.out_dir = "", .stop_at = 15, .on_step = {}});
  EXPECT_TRUE(SameParams(straight, resumed));
  fs::remove(path);
}

TEST(RunTrainingTest, WritesMetricsAndCheckpoints) {
  auto config = SmallRun();
  config.train.checkpoint_every = 40;
  const auto dir = TempPath("mddm_run_training_test");
  fs::remove_all(dir);
  train_model(config, {.out_dir = dir, .stop_at = -1, .on_step = {}});
  std::ifstream csv(fs::path(dir) / "metrics.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 100);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "ckpt_00000040.mddm"));
  EXPECT_TRUE(fs::exists(fs::path(dir) / "ckpt_00000080.mddm"));
  EXPECT_TRUE(fs::exists(fs::path(dir) / "final.mddm"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace mddm
