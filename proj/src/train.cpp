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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <thread>

#include "json.hpp"

#include "vfpt/errors.hpp"
#include "vfpt/ops.hpp"
#include "vfpt/random.hpp"

namespace vfpt {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

std::vector<std::size_t> batch_slice(const std::vector<std::size_t>& order, std::size_t start,
                                     std::size_t size) {
  const std::size_t end = std::min(order.size(), start + size);
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::size_t argmax_row(std::span<const double> logits, std::size_t row, std::size_t classes) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    if (logits[row * classes + c] > logits[row * classes + best]) best = c;
  }
  return best;
}

// Shared epoch loop for pretraining and tuning. `loss_fn` builds the batch
// loss; `end_of_epoch` returns the val accuracy for the record.
struct LoopSpec {
  const Dataset* train = nullptr;
  const TrainConfig* config = nullptr;
  double lr = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::function<Tensor(const Tensor&, std::span<const int>)> loss_fn;
  std::function<double()> end_of_epoch;
  std::function<void(std::size_t, double)> on_step;
};

RunRecord run_loop(const LoopSpec& spec, Sgd& sgd) {
  const TrainConfig& cfg = *spec.config;
  const Dataset& train = *spec.train;
  RunRecord rec;
  rec.lr = spec.lr;
  rec.weight_decay = spec.weight_decay;
  rec.seed = spec.seed;
  rec.train_loss.assign(cfg.epochs, kNaN);
  rec.val_accuracy.assign(cfg.epochs, kNaN);
  rec.learning_rate.assign(cfg.epochs, kNaN);

  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t warmup_steps = std::min(total_steps, cfg.warmup_epochs * steps_per_epoch);
  Rng order_rng(mix_seed(spec.seed, 0x5A1E));
  std::vector<double> step_seconds;
  step_seconds.reserve(total_steps);
  memory::reset_peak();

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !rec.diverged; ++epoch) {
    const auto order = permutation(n, order_rng);
    double loss_sum = 0.0;
    rec.learning_rate[epoch] = cosine_lr(step, total_steps, spec.lr, warmup_steps);
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const auto start_time = Clock::now();
      const auto idx = batch_slice(order, start, cfg.batch_size);
      const Tensor images = train.batch(idx);
      const std::vector<int> labels = train.batch_labels(idx);
      sgd.zero_grad();
      const Tensor loss = spec.loss_fn(images, labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        rec.diverged = true;
        rec.diverged_epoch = epoch;
        break;
      }
      backward(loss);
      sgd.step(cosine_lr(step, total_steps, spec.lr, warmup_steps), spec.weight_decay);
      step_seconds.push_back(seconds_since(start_time));
      loss_sum += value * static_cast<double>(idx.size());
      if (spec.on_step) spec.on_step(step, value);
    }
    if (rec.diverged) break;
    rec.train_loss[epoch] = loss_sum / static_cast<double>(n);
    rec.val_accuracy[epoch] = spec.end_of_epoch();
  }
  sgd.zero_grad();
  rec.final_val_accuracy = rec.diverged || cfg.epochs == 0 ? kNaN : rec.val_accuracy.back();
  rec.train_batch_seconds = median(std::move(step_seconds));
  rec.peak_bytes = memory::peak_bytes();
  return rec;
}

}  // namespace

void TrainConfig::validate(bool grid_search) const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive", "train.batch_size");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw ConfigError("base_lr must be positive", "train.base_lr");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("weight_decay must be nonnegative", "train.weight_decay");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)", "train.momentum");
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty", "train.seeds");
  if (grid_search) {
    if (lr_grid.empty()) throw ConfigError("lr_grid must not be empty", "train.lr_grid");
    if (wd_grid.empty()) throw ConfigError("wd_grid must not be empty", "train.wd_grid");
    for (double v : lr_grid) {
      if (!(v > 0.0)) throw ConfigError("lr_grid entries must be positive", "train.lr_grid");
    }
    for (double v : wd_grid) {
      if (!(v >= 0.0)) throw ConfigError("wd_grid entries must be nonnegative", "train.wd_grid");
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                 std::size_t warmup_steps) {
  if (step > total_steps) {
    throw BoundsError("step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
  }
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              double lr, double weight_decay, double momentum) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size())) {
    throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] -= lr * weight_decay * param[i];
    velocity[i] = momentum * velocity[i] + (grad.empty() ? 0.0 : grad[i]);
    param[i] -= lr * velocity[i];
  }
}

Sgd::Sgd(NamedTensors params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const auto& [name, t] : params_) {
    if (!t.requires_grad()) throw ContractError("optimizer given untracked tensor " + name);
    velocity_.emplace_back(t.numel(), 0.0);
  }
}

void Sgd::step(double lr, double weight_decay) {
  std::size_t k = 0;
  for (auto& [name, t] : params_) {
    const auto g = t.has_grad() ? t.grad() : std::span<const double>();
    sgd_step(t.mutable_data(), g, velocity_[k++], lr, weight_decay, momentum_);
  }
}

void Sgd::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Evaluation evaluate(const TunedModel& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard no_grad;
  Evaluation ev;
  if (data.size() == 0) return ev;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto idx = batch_slice(order, start, batch_size);
    const auto labels = data.batch_labels(idx);
    const Tensor logits = model.forward(data.batch(idx)).logits;
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      correct += static_cast<int>(argmax_row(logits.data(), r, classes)) == labels[r];
    }
    loss_sum += cross_entropy(logits, labels).item() * static_cast<double>(idx.size());
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  ev.loss = loss_sum / static_cast<double>(data.size());
  return ev;
}

void write_epoch_csv(std::ostream& out, const RunRecord& record) {
  out << "epoch,train_loss,val_accuracy,lr\n";
  out.precision(17);
  for (std::size_t e = 0; e < record.train_loss.size(); ++e) {
    out << e + 1 << ',' << record.train_loss[e] << ',' << record.val_accuracy[e] << ','
        << record.learning_rate[e] << '\n';
  }
}

std::string summary_json(const RunRecord& record) {
  nlohmann::json j;
  j["lr"] = record.lr;
  j["weight_decay"] = record.weight_decay;
  j["seed"] = record.seed;
  j["epochs"] = record.train_loss.size();
  j["final_train_loss"] = record.train_loss.empty() ? kNaN : record.train_loss.back();
  j["final_val_accuracy"] = record.final_val_accuracy;
  j["test_accuracy"] = record.test_accuracy;
  j["diverged"] = record.diverged;
  if (record.diverged) j["diverged_epoch"] = record.diverged_epoch + 1;
  j["train_batch_seconds"] = record.train_batch_seconds;
  j["peak_bytes"] = record.peak_bytes;
  j["backbone_checksum"] = record.backbone_checksum;
  return j.dump(2);
}

TuneResult tune(const Backbone& backbone, const PromptConfig& prompt, const TaskData& data,
                std::size_t num_classes, const TrainConfig& config, double lr,
                double weight_decay, std::uint64_t seed, const TuneOptions& options) {
  config.validate();
  TunedModel model = TunedModel::create(backbone, prompt, num_classes, seed);
  Sgd sgd(model.trainable(), config.momentum);
  LoopSpec spec;
  spec.train = &data.train;
  spec.config = &config;
  spec.lr = lr;
  spec.weight_decay = weight_decay;
  spec.seed = seed;
  spec.loss_fn = [&model](const Tensor& images, std::span<const int> labels) {
    return cross_entropy(model.forward(images).logits, labels);
  };
  spec.end_of_epoch = [&] { return evaluate(model, data.val, config.batch_size).accuracy; };
  spec.on_step = options.on_step;
  RunRecord rec = run_loop(spec, sgd);
  rec.test_accuracy = kNaN;
  if (options.evaluate_test && !rec.diverged) {
    rec.test_accuracy = evaluate(model, data.test, config.batch_size).accuracy;
  }
  rec.backbone_checksum = backbone.checksum();
  return {std::move(rec), std::move(model)};
}

PretrainResult pretrain(const BackboneConfig& config, const TaskData& data,
                        const TrainConfig& train, std::uint64_t seed) {
  train.validate();
  Backbone bb = Backbone::initialize(config, seed);
  Sgd sgd(bb.parameters(), train.momentum);
  LoopSpec spec;
  spec.train = &data.train;
  spec.config = &train;
  spec.lr = train.base_lr;
  spec.weight_decay = train.weight_decay;
  spec.seed = seed;
  spec.loss_fn = [&bb](const Tensor& images, std::span<const int> labels) {
    return cross_entropy(pretrain_forward(bb, images), labels);
  };
  auto accuracy = [&](const Dataset& ds) {
    NoGradGuard no_grad;
    std::size_t correct = 0;
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t start = 0; start < ds.size(); start += train.batch_size) {
      const auto idx = batch_slice(order, start, train.batch_size);
      const auto labels = ds.batch_labels(idx);
      const Tensor logits = pretrain_forward(bb, ds.batch(idx));
      for (std::size_t r = 0; r < idx.size(); ++r) {
        correct += static_cast<int>(argmax_row(logits.data(), r, logits.dim(1))) == labels[r];
      }
    }
    return ds.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(ds.size());
  };
  spec.end_of_epoch = [&] { return accuracy(data.val); };
  RunRecord rec = run_loop(spec, sgd);
  rec.test_accuracy = rec.diverged ? kNaN : accuracy(data.test);
  bb.freeze();
  rec.backbone_checksum = bb.checksum();
  return {std::move(bb), std::move(rec)};
}

GridResult grid_search(const Backbone& backbone, const PromptConfig& prompt,
                       const TaskData& data, std::size_t num_classes,
                       const TrainConfig& config, std::uint64_t seed) {
  config.validate(true);
  GridResult result;
  result.backbone_checksum_before = backbone.checksum();
  for (double lr : config.lr_grid) {
    for (double wd : config.wd_grid) result.cells.push_back({lr, wd, {}});
  }
  TuneOptions options;
  options.evaluate_test = false;
  parallel_for(result.cells.size(), [&](std::size_t i) {
    GridCell& cell = result.cells[i];
    cell.record = tune(backbone, prompt, data, num_classes, config, cell.lr, cell.weight_decay,
                       seed, options)
                      .record;
  });
  result.best = select_best(result.cells);
  result.any_valid = result.best < result.cells.size();
  if (!result.any_valid) result.best = 0;
  result.backbone_checksum_after = backbone.checksum();
  return result;
}

std::size_t select_best(std::span<const GridCell> cells) {
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    if (c.record.diverged || !std::isfinite(c.record.final_val_accuracy)) continue;
    if (best == cells.size()) {
      best = i;
      continue;
    }
    const GridCell& b = cells[best];
    const double acc = c.record.final_val_accuracy;
    const double best_acc = b.record.final_val_accuracy;
    const bool better =
        acc > best_acc ||
        (acc == best_acc &&
         (c.lr < b.lr || (c.lr == b.lr && c.weight_decay < b.weight_decay)));
    if (better) best = i;
  }
  return best;
}

void write_grid_csv(std::ostream& out, const GridResult& result) {
  out << "lr,weight_decay,final_train_loss,final_val_accuracy,diverged,selected\n";
  out.precision(17);
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    const double loss = c.record.train_loss.empty() ? kNaN : c.record.train_loss.back();
    out << c.lr << ',' << c.weight_decay << ',' << loss << ',' << c.record.final_val_accuracy
        << ',' << (c.record.diverged ? 1 : 0) << ',' << (result.any_valid && i == result.best)
        << '\n';
  }
}

std::vector<SweepRow> alpha_sweep(const Backbone& backbone, const PromptConfig& prompt,
                                  const TaskData& data, std::size_t num_classes,
                                  const TrainConfig& config, std::span<const double> alphas,
                                  std::span<const std::uint64_t> seeds, double lr,
                                  double weight_decay) {
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    PromptConfig p = prompt;
    p.alpha = a;
    p.validate(backbone.config().depth);
    for (auto s : seeds) rows.push_back({a, s, 0.0, 0.0, false});
  }
  parallel_for(rows.size(), [&](std::size_t i) {
    SweepRow& row = rows[i];
    PromptConfig p = prompt;
    p.alpha = row.alpha;
    const auto rec =
        tune(backbone, p, data, num_classes, config, lr, weight_decay, row.seed).record;
    row.val_accuracy = rec.final_val_accuracy;
    row.test_accuracy = rec.test_accuracy;
    row.diverged = rec.diverged;
  });
  return rows;
}

std::vector<SweepSummary> summarize_sweep(std::span<const SweepRow> rows) {
  std::vector<SweepSummary> out;
  std::map<double, std::vector<double>> by_alpha;
  std::vector<double> order;
  for (const auto& r : rows) {
    if (!by_alpha.count(r.alpha)) order.push_back(r.alpha);
    auto& v = by_alpha[r.alpha];
    if (!r.diverged && std::isfinite(r.val_accuracy)) v.push_back(r.val_accuracy);
  }
  for (double a : order) {
    const auto& v = by_alpha[a];
    SweepSummary s;
    s.alpha = a;
    s.runs = v.size();
    if (!v.empty()) {
      for (double x : v) s.mean += x;
      s.mean /= static_cast<double>(v.size());
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
    } else {
      s.mean = kNaN;
    }
    out.push_back(s);
  }
  return out;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "alpha,seed,val_accuracy,test_accuracy,diverged\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.alpha << ',' << r.seed << ',' << r.val_accuracy << ',' << r.test_accuracy << ','
        << (r.diverged ? 1 : 0) << '\n';
  }
}

void write_sweep_summary_csv(std::ostream& out, std::span<const SweepSummary> summary) {
  out << "alpha,mean_val_accuracy,std_val_accuracy,runs\n";
  out.precision(17);
  for (const auto& s : summary) {
    out << s.alpha << ',' << s.mean << ',' << s.std << ',' << s.runs << '\n';
  }
}

TimingReport time_batches(const Backbone& backbone, const PromptConfig& prompt,
                          std::size_t num_classes, std::size_t batch_size,
                          std::size_t batches, std::uint64_t seed) {
  return time_batches(backbone, std::span<const PromptConfig>(&prompt, 1), num_classes,
                      batch_size, batches, seed)
      .front();
}

namespace {

struct TimedModel {
  TunedModel model;
  Sgd sgd;
  std::vector<double> train_s;
  std::vector<double> infer_s;
};

}  // namespace

std::vector<TimingReport> time_batches(const Backbone& backbone,
                                       std::span<const PromptConfig> prompts,
                                       std::size_t num_classes, std::size_t batch_size,
                                       std::size_t batches, std::uint64_t seed) {
  if (batches < 50) throw ConfigError("timing needs at least 50 batches", "train.timing_batches");
  if (batch_size == 0) throw ConfigError("batch_size must be positive", "train.batch_size");
  const auto& c = backbone.config();
  std::int64_t backbone_bytes = 0;
  for (const auto& [name, t] : backbone.tensors()) {
    backbone_bytes += static_cast<std::int64_t>(t.numel() * sizeof(double));
  }

  Rng rng(mix_seed(seed, 0x71));
  const Tensor images =
      uniform({batch_size, c.channels, c.image_size, c.image_size}, 0.0, 1.0, rng);
  std::vector<int> labels(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) labels[i] = static_cast<int>(i % num_classes);

  auto train_step = [&](TimedModel& m) {
    m.sgd.zero_grad();
    const Tensor loss = cross_entropy(m.model.forward(images).logits, labels);
    backward(loss);
    m.sgd.step(1e-3, 0.0);
  };
  auto infer_step = [&](TimedModel& m) {
    NoGradGuard no_grad;
    return m.model.forward(images).logits.data()[0];
  };

  std::vector<TimingReport> reports(prompts.size());
  std::vector<std::unique_ptr<TimedModel>> models;
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    // Peak is relative to everything alive before this model existed.
    const std::int64_t baseline = memory::live_bytes();
    TunedModel model = TunedModel::create(backbone, prompts[k], num_classes, seed);
    reports[k].tuned_parameters = count_parameters(backbone, model.bank, &model.head).tuned;
    reports[k].batches = batches;
    Sgd sgd(model.trainable(), 0.9);
    auto timed = std::make_unique<TimedModel>(TimedModel{std::move(model), std::move(sgd), {}, {}});
    for (int i = 0; i < 3; ++i) {
      train_step(*timed);
      infer_step(*timed);
    }
    memory::reset_peak();
    train_step(*timed);
    reports[k].peak_bytes = backbone_bytes + memory::peak_bytes() - baseline;
    models.push_back(std::move(timed));
  }
  for (std::size_t i = 0; i < batches; ++i) {
    for (auto& m : models) {
      auto t0 = Clock::now();
      train_step(*m);
      m->train_s.push_back(seconds_since(t0));
      t0 = Clock::now();
      volatile double sink = infer_step(*m);
      (void)sink;
      m->infer_s.push_back(seconds_since(t0));
    }
  }
  for (std::size_t k = 0; k < models.size(); ++k) {
    reports[k].train_batch_seconds = median(std::move(models[k]->train_s));
    reports[k].infer_batch_seconds = median(std::move(models[k]->infer_s));
  }
  return reports;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("VFPT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(count, worker_count());
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace vfpt
