// Copyright 2026 The VFPT Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "vfpt/train.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "vfpt/errors.hpp"

namespace vfpt {
namespace {

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

TaskData tiny_task(TaskKind kind, std::size_t train = 64, std::size_t val = 32) {
  TaskSpec s;
  s.kind = kind;
  s.train_count = train;
  s.val_count = val;
  s.test_count = 32;
  s.seed = 3;
  auto d = generate(s);
  const auto norm = channel_stats(d.train);
  return {normalize(d.train, norm), normalize(d.val, norm), normalize(d.test, norm)};
}

Backbone frozen_backbone(std::uint64_t seed = 1) {
  auto bb = Backbone::initialize(tiny_backbone(), seed);
  bb.freeze();
  return bb;
}

TrainConfig short_config(std::size_t epochs = 4) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.warmup_epochs = 1;
  return c;
}

PromptConfig short_prompts() {
  PromptConfig p;
  p.length = 4;
  return p;
}

TEST(CosineLr, WarmupEndpointIsBaseRate) {
  EXPECT_DOUBLE_EQ(cosine_lr(10, 100, 0.5, 10), 0.5);
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.5, 10), 0.0);
  EXPECT_DOUBLE_EQ(cosine_lr(5, 100, 0.5, 10), 0.25);
}

TEST(CosineLr, DecaysToZeroAtTheEnd) {
  EXPECT_NEAR(cosine_lr(100, 100, 0.5, 10), 0.0, 1e-12);
  EXPECT_NEAR(cosine_lr(55, 100, 0.5, 10), 0.25, 1e-12);
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.5, 0), 0.5);
  EXPECT_THROW(cosine_lr(101, 100, 0.5, 10), BoundsError);
}

TEST(CosineLr, IsMonotoneAfterWarmup) {
  double prev = cosine_lr(10, 200, 1.0, 10);
  for (std::size_t s = 11; s <= 200; ++s) {
    const double v = cosine_lr(s, 200, 1.0, 10);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(SgdStep, ZeroGradientAndDecayLeaveParamsUnchanged) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
  sgd_step(p, g, v, 0.1, 0.0, 0.9);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(SgdStep, QuadraticFollowsGeometricDecay) {
  // f(w) = w^2 / 2 has gradient w, so plain SGD gives w_k = (1 - lr)^k.
  std::vector<double> w{1.0}, v{0.0};
  std::vector<double> g{w[0]};
  sgd_step(w, g, v, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(w[0], 0.9);
  for (int k = 2; k <= 200; ++k) {
    g[0] = w[0];
    sgd_step(w, g, v, 0.1, 0.0, 0.0);
    EXPECT_NEAR(w[0], std::pow(0.9, k), 1e-15);
  }
  EXPECT_LT(std::abs(w[0]), 1e-8);
}

TEST(SgdStep, DecoupledWeightDecayShrinksParams) {
  std::vector<double> p{2.0}, g, v{0.0};
  sgd_step(p, g, v, 0.5, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(p[0], 2.0 * (1.0 - 0.05));
}

TEST(SgdStep, MomentumAccumulatesVelocity) {
  std::vector<double> p{0.0}, g{1.0}, v{0.0};
  sgd_step(p, g, v, 1.0, 0.0, 0.9);
  sgd_step(p, g, v, 1.0, 0.0, 0.9);
  EXPECT_DOUBLE_EQ(v[0], 1.9);
  EXPECT_DOUBLE_EQ(p[0], -2.9);
}

TEST(Sgd, RejectsUntrackedTensors) {
  NamedTensors t;
  t.add("w", Tensor::zeros({2}));
  EXPECT_THROW(Sgd(t, 0.9), ContractError);
}

TEST(TrainConfig, ValidatesGrids) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate(true));
  c.lr_grid.clear();
  EXPECT_THROW(c.validate(true), ConfigError);
  EXPECT_NO_THROW(c.validate(false));
  c = TrainConfig{};
  c.base_lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Tune, RecordHasOneEntryPerEpochAndIsReproducible) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation);
  const auto cfg = short_config(3);
  const auto a = tune(bb, short_prompts(), data, 4, cfg, 0.1, 0.0, 7);
  const auto b = tune(bb, short_prompts(), data, 4, cfg, 0.1, 0.0, 7);
  ASSERT_EQ(a.record.train_loss.size(), 3u);
  ASSERT_EQ(a.record.val_accuracy.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.record.train_loss[e], b.record.train_loss[e]);
    EXPECT_EQ(a.record.val_accuracy[e], b.record.val_accuracy[e]);
  }
  EXPECT_EQ(a.model.tensors().checksum(), b.model.tensors().checksum());
  const auto c = tune(bb, short_prompts(), data, 4, cfg, 0.1, 0.0, 8);
  EXPECT_NE(a.model.tensors().checksum(), c.model.tensors().checksum());
}

TEST(Tune, OnlyTunableTensorsChange) {
  const auto bb = frozen_backbone();
  const auto before = bb.checksum();
  auto prompt = short_prompts();
  prompt.transform = TransformType::LLL;
  const auto data = tiny_task(TaskKind::SpatialLocation);
  const auto initial = TunedModel::create(bb, prompt, 4, 5).tensors();
  const auto result = tune(bb, prompt, data, 4, short_config(2), 0.1, 0.0, 5);
  EXPECT_EQ(bb.checksum(), before);
  EXPECT_EQ(result.record.backbone_checksum, before);
  for (const auto& [name, t] : result.model.tensors()) {
    const bool changed = checksum(t) != checksum(initial.at(name));
    EXPECT_EQ(changed, name != "prompt.offsets") << name;
  }
}

TEST(Tune, LossFallsBelowRandomBaseline) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation, 128, 32);
  const auto r = tune(bb, short_prompts(), data, 4, short_config(15), 0.1, 0.0, 2).record;
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.train_loss.back(), std::log(4.0));
  EXPECT_GT(r.final_val_accuracy, 0.25);
}

TEST(Tune, HugeLearningRateIsMarkedDiverged) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation);
  auto cfg = short_config(4);
  cfg.warmup_epochs = 0;
  const double lr = std::numeric_limits<double>::infinity();
  const auto r = tune(bb, short_prompts(), data, 4, cfg, lr, 0.0, 1).record;
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.train_loss.size(), 4u);
  EXPECT_TRUE(std::isnan(r.train_loss.back()));
  EXPECT_TRUE(std::isnan(r.final_val_accuracy));
}

TEST(Tune, StepCallbackSeesEveryStep) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation);
  TuneOptions opts;
  std::vector<double> losses;
  opts.on_step = [&](std::size_t step, double loss) {
    EXPECT_EQ(step, losses.size());
    losses.push_back(loss);
  };
  tune(bb, short_prompts(), data, 4, short_config(2), 0.1, 0.0, 1, opts);
  EXPECT_EQ(losses.size(), 2u * 4u);
}

TEST(Tune, EpochCsvAndSummaryHaveExpectedShape) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation);
  const auto r = tune(bb, short_prompts(), data, 4, short_config(2), 0.1, 0.0, 1).record;
  std::ostringstream csv;
  write_epoch_csv(csv, r);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "epoch,train_loss,val_accuracy,lr");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_NE(summary_json(r).find("\"final_val_accuracy\""), std::string::npos);
}

TEST(SelectBest, TiesGoToSmallerLrThenSmallerDecay) {
  auto cell = [](double lr, double wd, double acc, bool diverged = false) {
    GridCell c;
    c.lr = lr;
    c.weight_decay = wd;
    c.record.final_val_accuracy = acc;
    c.record.diverged = diverged;
    return c;
  };
  std::vector<GridCell> cells{cell(1.0, 0.0, 0.5), cell(0.5, 1e-4, 0.5), cell(0.5, 0.0, 0.5),
                              cell(0.1, 0.0, 0.4)};
  EXPECT_EQ(select_best(cells), 2u);
  cells.push_back(cell(5.0, 0.0, 0.9, true));
  EXPECT_EQ(select_best(cells), 2u);
  cells.push_back(cell(5.0, 0.0, 0.6));
  EXPECT_EQ(select_best(cells), 5u);
  std::vector<GridCell> none{cell(1.0, 0.0, 0.9, true)};
  EXPECT_EQ(select_best(none), 1u);
}

TEST(GridSearch, SingleCellAndFrozenBackbone) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation);
  auto cfg = short_config(2);
  cfg.lr_grid = {0.1};
  cfg.wd_grid = {0.0};
  const auto g = grid_search(bb, short_prompts(), data, 4, cfg, 1);
  ASSERT_EQ(g.cells.size(), 1u);
  EXPECT_TRUE(g.any_valid);
  EXPECT_EQ(g.best, 0u);
  EXPECT_EQ(g.backbone_checksum_before, g.backbone_checksum_after);
}

TEST(GridSearch, DeterministicSelectionAndCsv) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::SpatialLocation);
  auto cfg = short_config(2);
  cfg.lr_grid = {0.5, 0.05};
  cfg.wd_grid = {1e-4, 0.0};
  const auto a = grid_search(bb, short_prompts(), data, 4, cfg, 1);
  const auto b = grid_search(bb, short_prompts(), data, 4, cfg, 1);
  ASSERT_EQ(a.cells.size(), 4u);
  EXPECT_EQ(a.best, b.best);
  std::ostringstream ca, cb;
  write_grid_csv(ca, a);
  write_grid_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_EQ(a.cells[1].lr, 0.5);
  EXPECT_EQ(a.cells[1].weight_decay, 0.0);
}

TEST(AlphaSweep, RowCountAndVptEquivalence) {
  const auto bb = frozen_backbone();
  const auto data = tiny_task(TaskKind::FrequencyBand);
  const auto cfg = short_config(2);
  const std::vector<double> alphas{0.0, 0.5};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto rows = alpha_sweep(bb, short_prompts(), data, 4, cfg, alphas, seeds, 0.1, 0.0);
  ASSERT_EQ(rows.size(), alphas.size() * seeds.size());
  EXPECT_EQ(rows[0].alpha, 0.0);
  EXPECT_EQ(rows[3].alpha, 0.5);
  auto vpt = short_prompts();
  vpt.transform = TransformType::None;
  const auto ref = tune(bb, vpt, data, 4, cfg, 0.1, 0.0, 1).record;
  EXPECT_EQ(rows[0].val_accuracy, ref.final_val_accuracy);
  EXPECT_EQ(rows[0].test_accuracy, ref.test_accuracy);
}

TEST(AlphaSweep, SummaryMatchesHandComputedStatistics) {
  const std::vector<SweepRow> rows{{0.0, 1, 0.5, 0, false}, {0.0, 2, 0.7, 0, false},
                                   {1.0, 1, 0.6, 0, false}, {1.0, 2, 0.9, 0, true}};
  const auto s = summarize_sweep(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s[0].mean, 0.6);
  EXPECT_NEAR(s[0].std, std::sqrt(0.02), 1e-15);
  EXPECT_EQ(s[1].runs, 1u);
  EXPECT_DOUBLE_EQ(s[1].mean, 0.6);
  std::ostringstream out;
  write_sweep_summary_csv(out, s);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "alpha,mean_val_accuracy,std_val_accuracy,runs");
}

TEST(Timing, MemoryIndependentOfAlphaAndTrainSlowerThanInfer) {
  const auto bb = frozen_backbone();
  std::vector<std::int64_t> peaks;
  for (double alpha : {0.0, 0.5, 1.0}) {
    auto p = short_prompts();
    p.alpha = alpha;
    const auto r = time_batches(bb, p, 4, 8, 50, 1);
    EXPECT_GE(r.train_batch_seconds, r.infer_batch_seconds);
    peaks.push_back(r.peak_bytes);
  }
  EXPECT_EQ(peaks[0], peaks[1]);
  EXPECT_EQ(peaks[0], peaks[2]);
  EXPECT_THROW(time_batches(bb, short_prompts(), 4, 8, 10, 1), ConfigError);
}

TEST(Timing, InterleavedReportsMatchSingleRunMemory) {
  const auto bb = frozen_backbone();
  std::vector<PromptConfig> prompts(3, short_prompts());
  prompts[1].alpha = 0.5;
  prompts[2].alpha = 1.0;
  const auto reports = time_batches(bb, prompts, 4, 8, 50, 1);
  ASSERT_EQ(reports.size(), 3u);
  const auto single = time_batches(bb, prompts[0], 4, 8, 50, 1);
  for (const auto& r : reports) {
    EXPECT_EQ(r.peak_bytes, single.peak_bytes);
    EXPECT_EQ(r.batches, 50u);
    EXPECT_EQ(r.tuned_parameters, single.tuned_parameters);
    EXPECT_GT(r.train_batch_seconds, 0.0);
  }
}

TEST(Pretrain, LearnsSourceTaskAndReturnsFrozenBackbone) {
  TaskSpec s;
  s.kind = TaskKind::SourceOrientation;
  s.train_count = 128;
  s.val_count = 32;
  s.test_count = 32;
  const auto data = generate(s);
  auto cfg = short_config(6);
  cfg.base_lr = 0.05;
  const auto r = pretrain(tiny_backbone(), data, cfg, 4);
  EXPECT_TRUE(r.backbone.frozen());
  EXPECT_FALSE(r.record.diverged);
  EXPECT_LT(r.record.train_loss.back(), r.record.train_loss.front());
  EXPECT_EQ(r.record.backbone_checksum, r.backbone.checksum());
}

TEST(ParallelFor, VisitsEveryIndexOnceAndPropagatesErrors) {
  std::vector<std::atomic<int>> hits(37);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(5, [](std::size_t i) {
                 if (i == 3) throw BoundsError("boom");
               }),
               BoundsError);
  EXPECT_GE(worker_count(), 1u);
}

}  // namespace
}  // namespace vfpt
