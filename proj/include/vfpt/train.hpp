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

// Optimizer, schedule and the drivers built on them: backbone pretraining,
// prompt tuning runs, learning-rate / weight-decay grid search, Fourier
// fraction sweeps and the batch timing harness.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vfpt/backbone.hpp"
#include "vfpt/data.hpp"
#include "vfpt/named_tensors.hpp"
#include "vfpt/prompt.hpp"

namespace vfpt {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double base_lr = 0.1;
  double weight_decay = 0.0;
  double momentum = 0.9;
  std::size_t warmup_epochs = 10;
  std::vector<double> lr_grid{1.0, 0.5, 0.1, 0.05};
  std::vector<double> wd_grid{0.0001, 0.0};
  std::vector<std::uint64_t> seeds{0};

  void validate(bool grid_search = false) const;
};

/// Linear warmup from 0 to base_lr over warmup_steps, then half-cosine decay
/// reaching 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                 std::size_t warmup_steps);

/// One momentum-SGD update on raw buffers with decoupled weight decay:
///   p <- p - lr * wd * p;  v <- momentum * v + g;  p <- p - lr * v.
void sgd_step(std::span<double> param, std::span<const double> grad,
              std::span<double> velocity, double lr, double weight_decay, double momentum);

/// Momentum SGD over a fixed set of trainable tensors.
class Sgd {
 public:
  Sgd(NamedTensors params, double momentum);

  /// Applies one update from the current gradients; tensors without a
  /// gradient only receive weight decay.
  void step(double lr, double weight_decay);
  void zero_grad();

  const NamedTensors& params() const { return params_; }
  const std::vector<Buffer>& velocity() const { return velocity_; }

 private:
  NamedTensors params_;
  std::vector<Buffer> velocity_;
  double momentum_;
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

Evaluation evaluate(const TunedModel& model, const Dataset& data, std::size_t batch_size);

struct RunRecord {
  // Per-epoch series, always `epochs` long; NaN after a divergence.
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
  std::vector<double> learning_rate;
  double final_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::size_t diverged_epoch = 0;
  double train_batch_seconds = 0.0;  // median over the run
  std::int64_t peak_bytes = 0;
  std::uint64_t backbone_checksum = 0;
};

/// Epoch table `epoch,train_loss,val_accuracy,lr`.
void write_epoch_csv(std::ostream& out, const RunRecord& record);
/// Flat JSON object with the run's scalar fields.
std::string summary_json(const RunRecord& record);

struct TuneOptions {
  bool evaluate_test = true;
  // Called after every optimizer step with (global step, batch loss).
  std::function<void(std::size_t, double)> on_step;
};

struct TuneResult {
  RunRecord record;
  TunedModel model;
};

/// One prompt-tuning run on `data` (already normalized) with a frozen backbone.
TuneResult tune(const Backbone& backbone, const PromptConfig& prompt, const TaskData& data,
                std::size_t num_classes, const TrainConfig& config, double lr,
                double weight_decay, std::uint64_t seed, const TuneOptions& options = {});

struct PretrainResult {
  Backbone backbone;
  RunRecord record;
};

/// Trains every backbone tensor (including the pretraining head) on the
/// source task. The returned backbone is frozen.
PretrainResult pretrain(const BackboneConfig& config, const TaskData& data,
                        const TrainConfig& train, std::uint64_t seed);

struct GridCell {
  double lr = 0.0;
  double weight_decay = 0.0;
  RunRecord record;
};

struct GridResult {
  std::vector<GridCell> cells;  // lr-major in grid order
  std::size_t best = 0;
  bool any_valid = false;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

/// One run per (lr, wd) cell on the train split, selected by final val
/// accuracy; ties go to the smaller lr, then the smaller wd. Diverged cells
/// are excluded.
GridResult grid_search(const Backbone& backbone, const PromptConfig& prompt,
                       const TaskData& data, std::size_t num_classes,
                       const TrainConfig& config, std::uint64_t seed);

/// Index of the best non-diverged cell, or cells.size() when none qualifies.
std::size_t select_best(std::span<const GridCell> cells);

void write_grid_csv(std::ostream& out, const GridResult& result);

struct SweepRow {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  bool diverged = false;
};

struct SweepSummary {
  double alpha = 0.0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t runs = 0;
};

/// One run per (alpha, seed), alpha-major.
std::vector<SweepRow> alpha_sweep(const Backbone& backbone, const PromptConfig& prompt,
                                  const TaskData& data, std::size_t num_classes,
                                  const TrainConfig& config, std::span<const double> alphas,
                                  std::span<const std::uint64_t> seeds, double lr,
                                  double weight_decay);

/// Mean and std of val accuracy per alpha over non-diverged runs.
std::vector<SweepSummary> summarize_sweep(std::span<const SweepRow> rows);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);
void write_sweep_summary_csv(std::ostream& out, std::span<const SweepSummary> summary);

struct TimingReport {
  double train_batch_seconds = 0.0;  // median
  double infer_batch_seconds = 0.0;  // median
  std::int64_t peak_bytes = 0;       // live tensor buffers during a train step
  std::size_t tuned_parameters = 0;
  std::size_t batches = 0;
};

/// Times `batches` (at least 50) warm train steps and inference passes on
/// random images. Peak memory is measured single-threaded around one step.
TimingReport time_batches(const Backbone& backbone, const PromptConfig& prompt,
                          std::size_t num_classes, std::size_t batch_size,
                          std::size_t batches, std::uint64_t seed);

/// Same measurements for several prompt configs, one report each. Batches
/// are interleaved round-robin across the configs so that slow drift of the
/// machine affects them equally.
std::vector<TimingReport> time_batches(const Backbone& backbone,
                                       std::span<const PromptConfig> prompts,
                                       std::size_t num_classes, std::size_t batch_size,
                                       std::size_t batches, std::uint64_t seed);

/// Runs fn(0..count-1) on up to worker_count() threads.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);
/// VFPT_THREADS if set, otherwise the hardware concurrency (at least 1).
std::size_t worker_count();

}  // namespace vfpt
