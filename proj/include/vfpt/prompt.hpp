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

// Prompt construction and insertion for frozen-backbone prompt tuning.
//
// Each prompted layer i owns raw prompts P^i of shape [M, width]. The first
// m = round(alpha * M) rows are mapped through the configured transform
// (real part of a 2D or 1D DFT, or a fixed/learnable linear map along the
// hidden axis); the remaining M - m rows are used verbatim. The transformed
// block is placed before (Prepend), after (Append) or at a seeded offset
// inside (Random) the plain rows. Tokens enter each layer as
// [class, prompts, patches]; in the Deep variant a layer's prompt outputs are
// dropped and replaced by the next layer's fresh prompts.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vfpt/backbone.hpp"
#include "vfpt/named_tensors.hpp"

namespace vfpt {

enum class PromptLocation { Prepend, Append, Random };
enum class DimMode { SequenceOnly, HiddenOnly, Both };
enum class TransformType { FFT, FLL, LLL, None };
enum class PromptVariant { Shallow, Deep };

std::string_view to_string(PromptLocation v);
std::string_view to_string(DimMode v);
std::string_view to_string(TransformType v);
std::string_view to_string(PromptVariant v);
PromptLocation parse_location(std::string_view s);
DimMode parse_dim_mode(std::string_view s);
TransformType parse_transform(std::string_view s);
PromptVariant parse_variant(std::string_view s);

struct PromptConfig {
  std::size_t length = 10;  // M
  double alpha = 0.5;       // Fourier fraction
  PromptLocation location = PromptLocation::Prepend;
  // Layers (1-based) whose prompts are transformed. Empty means every
  // prompted layer.
  std::vector<std::size_t> depth_set;
  DimMode dim_mode = DimMode::Both;
  TransformType transform = TransformType::FFT;
  PromptVariant variant = PromptVariant::Deep;

  /// m = round(alpha * M), halves rounded up.
  std::size_t fourier_count() const;
  /// Layers that receive prompts: all of 1..depth for Deep, {1} for Shallow.
  std::vector<std::size_t> insertion_layers(std::size_t depth) const;
  /// Layers whose prompts are transformed, after defaults and the Shallow
  /// restriction are applied.
  std::vector<std::size_t> resolved_depth_set(std::size_t depth) const;
  void validate(std::size_t depth) const;
};

/// Trainable prompts plus the optional linear-transform matrices.
class PromptBank {
 public:
  /// Prompts ~ U[-r, r], r = sqrt(6 / (width + patch_dim)); FLL/LLL weights
  /// ~ truncated normal(0.02); Random-location offsets drawn here.
  static PromptBank initialize(const PromptConfig& config, const BackboneConfig& backbone,
                               std::uint64_t seed);
  static PromptBank from_tensors(const PromptConfig& config, const BackboneConfig& backbone,
                                 const NamedTensors& tensors);

  /// `prompt.layer{i}`, `prompt.lll` / `prompt.fll`, `prompt.offsets`.
  NamedTensors tensors() const;
  /// Tensors the optimizer updates: prompts and, for LLL, its weight.
  NamedTensors trainable() const;

  bool has_layer(std::size_t layer) const { return prompts_.count(layer) != 0; }
  const Tensor& layer(std::size_t layer) const;
  const std::map<std::size_t, Tensor>& layers() const { return prompts_; }
  const Tensor& lll() const { return lll_; }
  const Tensor& fll() const { return fll_; }
  /// Start row of the transformed block for Random location.
  std::size_t random_offset(std::size_t layer) const;

  std::size_t prompt_parameter_count() const;
  std::size_t trainable_parameter_count() const;

 private:
  std::map<std::size_t, Tensor> prompts_;
  std::map<std::size_t, std::size_t> offsets_;
  Tensor lll_;
  Tensor fll_;
};

Tensor fll_transform(const Tensor& block, const Tensor& fixed_weight);
Tensor lll_transform(const Tensor& block, const Tensor& learned_weight);

/// Assembled prompts [M, width] entering layer `layer`.
Tensor build_layer_prompts(const PromptBank& bank, const PromptConfig& config,
                           std::size_t layer, std::size_t depth);

/// [batch * (1 + P), width] -> [batch * (1 + M + P), width], each example laid
/// out as [class, prompts, patches]. M = 0 returns the input unchanged.
Tensor insert_prompts(const Tensor& tokens, const Tensor& prompts, std::size_t batch);

/// Inverse bookkeeping of insert_prompts: drops the M prompt rows per example.
Tensor drop_prompts(const Tensor& tokens, std::size_t batch, std::size_t prompts);

struct TunedOutput {
  Tensor logits;                   // [batch, classes]
  std::vector<Tensor> attention;   // per layer, [batch, heads, seq, seq]
  std::vector<std::size_t> seq;    // per layer token count
};

/// Frozen backbone + prompts + head on a batch of images.
TunedOutput tuned_forward(const Backbone& backbone, const PromptBank& bank,
                          const PromptConfig& config, const ClassificationHead& head,
                          const Tensor& images);

struct ParameterCount {
  std::size_t tuned = 0;
  std::size_t total = 0;
  double percent = 0.0;
};

/// tuned = prompts + head + LLL; total = backbone encoder + tuned.
ParameterCount count_parameters(std::size_t backbone_params, const PromptBank& bank,
                                const ClassificationHead* head);
ParameterCount count_parameters(const Backbone& backbone, const PromptBank& bank,
                                const ClassificationHead* head);

/// Everything a tuning run owns, with the backbone shared read-only.
struct TunedModel {
  Backbone backbone;
  PromptConfig prompt;
  PromptBank bank;
  ClassificationHead head;

  static TunedModel create(const Backbone& backbone, const PromptConfig& prompt,
                           std::size_t num_classes, std::uint64_t seed);

  /// Trainable tensors by checkpoint name (prompts, LLL, head).
  NamedTensors trainable() const;
  /// Checkpoint view: bank tensors plus `head.weight` / `head.bias`.
  NamedTensors tensors() const;
  static TunedModel from_tensors(const Backbone& backbone, const PromptConfig& prompt,
                                 const NamedTensors& tensors);

  TunedOutput forward(const Tensor& images) const {
    return tuned_forward(backbone, bank, prompt, head, images);
  }
  /// Deep copy of the tunable state; the backbone stays shared.
  TunedModel clone_tunable() const;
};

}  // namespace vfpt
