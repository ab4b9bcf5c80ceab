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

#pragma once

#include <cstdint>
#include <string>

#include "vfpt/named_tensors.hpp"
#include "vfpt/tensor.hpp"

namespace vfpt {

/// Architecture of the small ViT encoder. The defaults are the desk-scale
/// model used throughout the tests.
struct BackboneConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t depth = 6;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes_pretrain = 4;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t mlp_width() const { return width * mlp_ratio; }

  bool operator==(const BackboneConfig&) const = default;
};

/// Result of one encoder block on a batch of token matrices.
struct LayerOutput {
  Tensor tokens;     // [batch * seq, width]
  Tensor attention;  // [batch, heads, seq, seq], post-softmax
};

/// Pre-norm ViT: patch embedding, class token, learned positions, `depth`
/// attention+MLP blocks, final norm, and the pretraining head.
///
/// Copies share parameter storage. A frozen backbone never tracks gradients,
/// so it can be read concurrently.
class Backbone {
 public:
  /// Truncated-normal(0.02) weights, zero biases, unit norm gains.
  static Backbone initialize(const BackboneConfig& config, std::uint64_t seed);
  /// Rebuilds from tensors produced by `tensors()`; shapes are validated.
  static Backbone from_tensors(const NamedTensors& tensors);

  const BackboneConfig& config() const { return config_; }
  const Tensor& param(const std::string& name) const { return params_.at(name); }
  const NamedTensors& parameters() const { return params_; }

  /// All parameters plus an encoded config entry, for checkpointing.
  NamedTensors tensors() const;

  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  std::uint64_t checksum() const { return params_.checksum(); }
  /// Encoder parameters (patch embedding through final norm); the
  /// pretraining head is excluded since tuning replaces it.
  std::size_t encoder_parameter_count() const;

  Backbone clone() const;

 private:
  BackboneConfig config_;
  NamedTensors params_;
  bool frozen_ = false;
};

/// Stacked images [batch, channels, H, W] -> patch tokens [batch * P, width]
/// with position embeddings (positions 1..P) added.
Tensor embed_patches(const Backbone& backbone, const Tensor& images);

/// Single image [channels, H, W] -> [P, width].
Tensor embed(const Backbone& backbone, const Tensor& image);

/// Interleaves class tokens: [batch * P, width] -> [batch * (1 + P), width]
/// with each example laid out as [class, patches].
Tensor prepend_class_token(const Backbone& backbone, const Tensor& patch_tokens,
                           std::size_t batch);

/// Block `layer` (1-based) over [batch * seq, width] tokens.
LayerOutput encoder_layer(const Backbone& backbone, std::size_t layer,
                          const Tensor& tokens, std::size_t batch, std::size_t seq);

/// Final norm of each example's class row: [batch * seq, width] -> [batch, width].
Tensor class_features(const Backbone& backbone, const Tensor& tokens,
                      std::size_t batch, std::size_t seq);

/// Unprompted forward through the pretraining head: logits [batch, classes].
Tensor pretrain_forward(const Backbone& backbone, const Tensor& images);

/// Linear classifier applied to class features.
struct ClassificationHead {
  Tensor weight;  // [width, classes]
  Tensor bias;    // [classes]

  static ClassificationHead initialize(std::size_t width, std::size_t classes,
                                       std::uint64_t seed);
  std::size_t parameter_count() const;
  std::size_t classes() const { return bias.numel(); }
};

Tensor classify_head(const ClassificationHead& head, const Tensor& features);

/// Rows of `images` [N, C, H, W] selected by `index`, as a new batch.
Tensor select_images(const Tensor& images, const std::vector<std::size_t>& index);

}  // namespace vfpt
