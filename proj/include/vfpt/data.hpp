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

// Synthetic grayscale image tasks.
//
//   SourceOrientation  gratings labelled by orientation bucket (pretraining)
//   SpatialLocation    bright square labelled by quadrant
//   FrequencyBand      grating at random orientation labelled by frequency band
//   HybridCount        scattered blobs labelled by count - 1
//
// Every example is generated from its own counter-derived stream, so any
// index can be produced independently of the others.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vfpt/tensor.hpp"

namespace vfpt {

enum class TaskKind { SourceOrientation, SpatialLocation, FrequencyBand, HybridCount };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view s);

struct TaskSpec {
  std::string name = "task";
  TaskKind kind = TaskKind::SourceOrientation;
  std::size_t num_classes = 4;
  std::size_t train_count = 800;
  std::size_t val_count = 200;
  std::size_t test_count = 400;
  std::size_t image_size = 32;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Labelled images stored contiguously as [N, 1, H, W].
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t image_size, Buffer pixels, std::vector<int> labels);

  std::size_t size() const { return labels_.size(); }
  std::size_t image_size() const { return image_size_; }
  std::size_t image_numel() const { return image_size_ * image_size_; }
  std::span<const int> labels() const { return labels_; }
  std::span<const double> pixels() const { return pixels_; }
  std::span<const double> image_pixels(std::size_t i) const;

  Tensor image(std::size_t i) const;
  /// Images at `indices` as [B, 1, H, W].
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Per-class example counts, length `classes`.
  std::vector<std::size_t> histogram(std::size_t classes) const;
  std::uint64_t checksum() const;

  /// Same labels over replacement pixel values.
  Dataset with_pixels(Buffer pixels) const;

 private:
  std::size_t image_size_ = 0;
  Buffer pixels_;
  std::vector<int> labels_;
};

/// Single example; `index` selects the counter stream and the label
/// (index mod num_classes). `stream` separates the train/val pool from test.
void render_example(const TaskSpec& spec, std::uint64_t stream, std::size_t index,
                    std::span<double> out, int& label);
/// Noise-free image used by oracles; same draws as render_example.
void render_clean(const TaskSpec& spec, std::uint64_t stream, std::size_t index,
                  std::span<double> out, int& label);

Dataset generate_pool(const TaskSpec& spec, std::uint64_t stream, std::size_t count);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded class-stratified split; each class is spread over both parts so
/// per-class counts differ by at most one from the balanced share.
SplitIndices split(std::span<const int> labels, std::size_t train_count,
                   std::size_t val_count, std::uint64_t seed);

struct TaskData {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Pool of train_count + val_count examples split by `split`, plus an
/// independently generated test pool.
TaskData generate(const TaskSpec& spec);

struct Normalization {
  double mean = 0.0;
  double std = 1.0;
};

/// Single-channel statistics of a dataset.
Normalization channel_stats(const Dataset& data);
/// Statistics of the default source task with the given seed.
Normalization source_statistics(std::uint64_t seed, std::size_t image_size = 32);

Tensor normalize(const Tensor& images, const Normalization& norm);
Tensor denormalize(const Tensor& images, const Normalization& norm);
Dataset normalize(const Dataset& data, const Normalization& norm);

/// Spatial frequency (cycles per image) at the centre of band k.
double band_frequency(std::size_t k);

}  // namespace vfpt
