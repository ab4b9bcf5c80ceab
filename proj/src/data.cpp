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

#include "vfpt/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vfpt/errors.hpp"
#include "vfpt/random.hpp"

namespace vfpt {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Grating amplitudes around mid-gray.
constexpr double kSourceAmplitude = 0.5;
constexpr double kBandAmplitude = 0.15;

void grating(std::span<double> out, std::size_t size, double freq, double theta, double phase,
             double amp) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double k = kTwoPi * freq / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = k * (static_cast<double>(x) * c + static_cast<double>(y) * s) + phase;
      out[y * size + x] = 0.5 + amp * std::sin(t);
    }
  }
}

void render(const TaskSpec& spec, std::uint64_t stream, std::size_t index,
            std::span<double> out, int& label, bool noisy) {
  const std::size_t n = spec.image_size;
  const std::size_t classes = spec.num_classes;
  const std::size_t k = index % classes;
  label = static_cast<int>(k);
  Rng rng(mix_seed(mix_seed(spec.seed, stream), index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::fill(out.begin(), out.end(), 0.0);

  switch (spec.kind) {
    case TaskKind::SourceOrientation: {
      const double jitter = 0.1 + 0.8 * u01(rng);
      const double theta = (static_cast<double>(k) + jitter) * std::numbers::pi /
                           static_cast<double>(classes);
      const double freq = 2.0 + 4.0 * u01(rng);
      grating(out, n, freq, theta, kTwoPi * u01(rng), kSourceAmplitude);
      break;
    }
    case TaskKind::SpatialLocation: {
      const std::size_t cols =
          static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
      const std::size_t rows = (classes + cols - 1) / cols;
      const std::size_t cw = n / cols, ch = n / rows;
      const std::size_t side = std::max<std::size_t>(1, std::min(cw, ch) / 2);
      const std::size_t x0 = (k % cols) * cw + static_cast<std::size_t>(u01(rng) * (cw - side + 1));
      const std::size_t y0 = (k / cols) * ch + static_cast<std::size_t>(u01(rng) * (ch - side + 1));
      for (std::size_t y = y0; y < std::min(n, y0 + side); ++y) {
        for (std::size_t x = x0; x < std::min(n, x0 + side); ++x) out[y * n + x] = 1.0;
      }
      break;
    }
    case TaskKind::FrequencyBand: {
      const double theta = std::numbers::pi * u01(rng);
      const double freq = band_frequency(k) + (2.0 * u01(rng) - 1.0);
      grating(out, n, freq, theta, kTwoPi * u01(rng), kBandAmplitude);
      break;
    }
    case TaskKind::HybridCount: {
      const std::size_t blobs = k + 1;
      const double sigma = static_cast<double>(n) / 20.0;
      const double margin = 2.0 * sigma;
      const double min_gap = 4.0 * sigma;
      std::vector<std::pair<double, double>> centres;
      for (std::size_t b = 0; b < blobs; ++b) {
        double cx = 0.0, cy = 0.0;
        for (int attempt = 0; attempt < 100; ++attempt) {
          cx = margin + (static_cast<double>(n) - 2.0 * margin) * u01(rng);
          cy = margin + (static_cast<double>(n) - 2.0 * margin) * u01(rng);
          bool clear = true;
          for (const auto& [px, py] : centres) {
            clear = clear && std::hypot(cx - px, cy - py) >= min_gap;
          }
          if (clear) break;
        }
        centres.emplace_back(cx, cy);
      }
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          double v = 0.0;
          for (const auto& [cx, cy] : centres) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            v = std::max(v, std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
          }
          out[y * n + x] = v;
        }
      }
      break;
    }
  }

  if (noisy && spec.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (auto& v : out) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::SourceOrientation: return "source_orientation";
    case TaskKind::SpatialLocation: return "spatial_location";
    case TaskKind::FrequencyBand: return "frequency_band";
    case TaskKind::HybridCount: return "hybrid_count";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view s) {
  for (auto k : {TaskKind::SourceOrientation, TaskKind::SpatialLocation, TaskKind::FrequencyBand,
                 TaskKind::HybridCount}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown task kind '" + std::string(s) + "'", "data.kind");
}

double band_frequency(std::size_t k) { return 3.0 + 3.0 * static_cast<double>(k); }

void TaskSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2", "data.num_classes");
  if (train_count == 0) throw ConfigError("train_count must be positive", "data.train_count");
  if (val_count == 0) throw ConfigError("val_count must be positive", "data.val_count");
  if (test_count == 0) throw ConfigError("test_count must be positive", "data.test_count");
  if (image_size < 4) throw ConfigError("image_size must be at least 4", "data.image_size");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ConfigError("noise_std must be finite and nonnegative", "data.noise_std");
  }
  if (kind == TaskKind::FrequencyBand &&
      band_frequency(num_classes - 1) + 1.5 >= static_cast<double>(image_size) / 2.0) {
    throw ConfigError("frequency bands exceed the Nyquist limit for image_size " +
                          std::to_string(image_size),
                      "data.num_classes");
  }
}

Dataset::Dataset(std::size_t image_size, Buffer pixels, std::vector<int> labels)
    : image_size_(image_size), pixels_(std::move(pixels)), labels_(std::move(labels)) {
  if (pixels_.size() != labels_.size() * image_numel()) {
    throw ShapeError(std::to_string(pixels_.size()) + " pixels do not hold " +
                     std::to_string(labels_.size()) + " images of size " +
                     std::to_string(image_size_));
  }
}

std::span<const double> Dataset::image_pixels(std::size_t i) const {
  if (i >= size()) throw BoundsError("example " + std::to_string(i) + " out of range");
  return std::span<const double>(pixels_).subspan(i * image_numel(), image_numel());
}

Tensor Dataset::image(std::size_t i) const {
  const auto px = image_pixels(i);
  return Tensor::from({1, image_size_, image_size_}, Buffer(px.begin(), px.end()));
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  Buffer out;
  out.reserve(indices.size() * image_numel());
  for (std::size_t i : indices) {
    const auto px = image_pixels(i);
    out.insert(out.end(), px.begin(), px.end());
  }
  return Tensor::from({indices.size(), 1, image_size_, image_size_}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw BoundsError("example " + std::to_string(i) + " out of range");
    out.push_back(labels_[i]);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  auto images = batch(indices);
  const auto px = images.data();
  return Dataset(image_size_, Buffer(px.begin(), px.end()), batch_labels(indices));
}

std::vector<std::size_t> Dataset::histogram(std::size_t classes) const {
  std::vector<std::size_t> h(classes, 0);
  for (int l : labels_) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw BoundsError("label " + std::to_string(l) + " outside " + std::to_string(classes) +
                        " classes");
    }
    ++h[static_cast<std::size_t>(l)];
  }
  return h;
}

std::uint64_t Dataset::checksum() const {
  const auto* p = reinterpret_cast<const std::uint8_t*>(pixels_.data());
  const auto* l = reinterpret_cast<const std::uint8_t*>(labels_.data());
  const std::uint64_t h = checksum_bytes({p, pixels_.size() * sizeof(double)});
  return checksum_bytes({l, labels_.size() * sizeof(int)}, h);
}

Dataset Dataset::with_pixels(Buffer pixels) const {
  return Dataset(image_size_, std::move(pixels), labels_);
}

void render_example(const TaskSpec& spec, std::uint64_t stream, std::size_t index,
                    std::span<double> out, int& label) {
  render(spec, stream, index, out, label, true);
}

void render_clean(const TaskSpec& spec, std::uint64_t stream, std::size_t index,
                  std::span<double> out, int& label) {
  render(spec, stream, index, out, label, false);
}

Dataset generate_pool(const TaskSpec& spec, std::uint64_t stream, std::size_t count) {
  spec.validate();
  const std::size_t numel = spec.image_size * spec.image_size;
  Buffer pixels(count * numel);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    render_example(spec, stream, i, std::span<double>(pixels).subspan(i * numel, numel),
                   labels[i]);
  }
  return Dataset(spec.image_size, std::move(pixels), std::move(labels));
}

SplitIndices split(std::span<const int> labels, std::size_t train_count, std::size_t val_count,
                   std::uint64_t seed) {
  if (train_count + val_count > labels.size()) {
    throw ConfigError("split of " + std::to_string(train_count) + " + " +
                          std::to_string(val_count) + " exceeds " +
                          std::to_string(labels.size()) + " examples",
                      "data.train_count");
  }
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw BoundsError("negative label");
    max_label = std::max(max_label, l);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Rng rng(mix_seed(seed, 0x5B1));
  for (auto& members : by_class) {
    const auto p = permutation(members.size(), rng);
    std::vector<std::size_t> shuffled(members.size());
    for (std::size_t i = 0; i < p.size(); ++i) shuffled[i] = members[p[i]];
    members = std::move(shuffled);
  }
  const auto class_order = permutation(classes, rng);

  // Round-robin over classes: any prefix stays balanced within one example.
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  for (std::size_t round = 0; order.size() < labels.size(); ++round) {
    for (std::size_t c : class_order) {
      if (round < by_class[c].size()) order.push_back(by_class[c][round]);
    }
  }
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_count));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(train_count),
                 order.begin() + static_cast<std::ptrdiff_t>(train_count + val_count));
  return out;
}

TaskData generate(const TaskSpec& spec) {
  const Dataset pool = generate_pool(spec, 1, spec.train_count + spec.val_count);
  const SplitIndices parts = split(pool.labels(), spec.train_count, spec.val_count, spec.seed);
  return {pool.subset(parts.train), pool.subset(parts.val),
          generate_pool(spec, 2, spec.test_count)};
}

Normalization channel_stats(const Dataset& data) {
  const auto px = data.pixels();
  if (px.empty()) throw ContractError("statistics of an empty dataset");
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= static_cast<double>(px.size());
  double var = 0.0;
  for (double v : px) var += (v - mean) * (v - mean);
  var /= static_cast<double>(px.size());
  return {mean, std::sqrt(std::max(var, 1e-12))};
}

Normalization source_statistics(std::uint64_t seed, std::size_t image_size) {
  TaskSpec spec;
  spec.kind = TaskKind::SourceOrientation;
  spec.image_size = image_size;
  spec.seed = seed;
  return channel_stats(generate_pool(spec, 1, 1000));
}

Tensor normalize(const Tensor& images, const Normalization& norm) {
  Buffer out(images.data().begin(), images.data().end());
  for (auto& v : out) v = (v - norm.mean) / norm.std;
  return Tensor::from(images.shape(), std::move(out));
}

Tensor denormalize(const Tensor& images, const Normalization& norm) {
  Buffer out(images.data().begin(), images.data().end());
  for (auto& v : out) v = v * norm.std + norm.mean;
  return Tensor::from(images.shape(), std::move(out));
}

Dataset normalize(const Dataset& data, const Normalization& norm) {
  Buffer out(data.pixels().begin(), data.pixels().end());
  for (auto& v : out) v = (v - norm.mean) / norm.std;
  return data.with_pixels(std::move(out));
}

}  // namespace vfpt
