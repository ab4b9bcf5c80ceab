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

#include "vfpt/prompt.hpp"

#include <algorithm>
#include <cmath>

#include "vfpt/errors.hpp"
#include "vfpt/ops.hpp"
#include "vfpt/random.hpp"
#include "vfpt/spectral.hpp"

namespace vfpt {

namespace {

std::string layer_name(std::size_t layer) { return "prompt.layer" + std::to_string(layer); }

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<std::string_view, E> (&table)[N],
             const char* key) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) {
    if (!options.empty()) options += ", ";
    options += name;
  }
  throw ConfigError("invalid value '" + std::string(s) + "' for " + key + " (expected one of " +
                        options + ")",
                    key);
}

constexpr std::pair<std::string_view, PromptLocation> kLocations[] = {
    {"prepend", PromptLocation::Prepend},
    {"append", PromptLocation::Append},
    {"random", PromptLocation::Random}};
constexpr std::pair<std::string_view, DimMode> kDimModes[] = {
    {"sequence", DimMode::SequenceOnly}, {"hidden", DimMode::HiddenOnly}, {"both", DimMode::Both}};
constexpr std::pair<std::string_view, TransformType> kTransforms[] = {
    {"fft", TransformType::FFT},
    {"fll", TransformType::FLL},
    {"lll", TransformType::LLL},
    {"none", TransformType::None}};
constexpr std::pair<std::string_view, PromptVariant> kVariants[] = {
    {"shallow", PromptVariant::Shallow}, {"deep", PromptVariant::Deep}};

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::pair<std::string_view, E> (&table)[N]) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

Tensor apply_transform(const Tensor& block, const PromptConfig& config, const PromptBank& bank) {
  switch (config.transform) {
    case TransformType::FLL:
      return fll_transform(block, bank.fll());
    case TransformType::LLL:
      return lll_transform(block, bank.lll());
    case TransformType::FFT:
    case TransformType::None:
      break;
  }
  throw ContractError("unhandled prompt transform");
}

}  // namespace

std::string_view to_string(PromptLocation v) { return enum_name(v, kLocations); }
std::string_view to_string(DimMode v) { return enum_name(v, kDimModes); }
std::string_view to_string(TransformType v) { return enum_name(v, kTransforms); }
std::string_view to_string(PromptVariant v) { return enum_name(v, kVariants); }
PromptLocation parse_location(std::string_view s) {
  return parse_enum(s, kLocations, "prompt.location");
}
DimMode parse_dim_mode(std::string_view s) { return parse_enum(s, kDimModes, "prompt.dim_mode"); }
TransformType parse_transform(std::string_view s) {
  return parse_enum(s, kTransforms, "prompt.transform");
}
PromptVariant parse_variant(std::string_view s) {
  return parse_enum(s, kVariants, "prompt.variant");
}

std::size_t PromptConfig::fourier_count() const {
  // The small epsilon keeps products such as 0.15 * 10 on the rounded-up side.
  const double scaled = alpha * static_cast<double>(length);
  return static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9));
}

std::vector<std::size_t> PromptConfig::insertion_layers(std::size_t depth) const {
  if (variant == PromptVariant::Shallow) return {1};
  std::vector<std::size_t> layers(depth);
  for (std::size_t i = 0; i < depth; ++i) layers[i] = i + 1;
  return layers;
}

std::vector<std::size_t> PromptConfig::resolved_depth_set(std::size_t depth) const {
  if (variant == PromptVariant::Shallow) return {1};
  if (depth_set.empty()) return insertion_layers(depth);
  std::vector<std::size_t> out = depth_set;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void PromptConfig::validate(std::size_t depth) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("prompt.alpha must lie in [0, 1], got " + std::to_string(alpha),
                      "prompt.alpha");
  }
  if (fourier_count() > length) {
    throw ConfigError("round(alpha * M) exceeds M", "prompt.alpha");
  }
  if (depth == 0) throw ConfigError("backbone depth must be positive", "backbone.depth");
  for (std::size_t layer : depth_set) {
    if (layer < 1 || layer > depth) {
      throw ConfigError("prompt.depth_set entry " + std::to_string(layer) + " outside [1, " +
                            std::to_string(depth) + "]",
                        "prompt.depth_set");
    }
  }
}

PromptBank PromptBank::initialize(const PromptConfig& config, const BackboneConfig& backbone,
                                  std::uint64_t seed) {
  config.validate(backbone.depth);
  PromptBank bank;
  const std::size_t d = backbone.width;
  const double r = std::sqrt(6.0 / static_cast<double>(d + backbone.patch_dim()));
  Rng rng(mix_seed(seed, 0x9A0));
  if (config.length > 0) {
    for (std::size_t layer : config.insertion_layers(backbone.depth)) {
      bank.prompts_[layer] = uniform({config.length, d}, -r, r, rng, true);
    }
  }
  Rng linear_rng(mix_seed(seed, 0x11));
  if (config.transform == TransformType::FLL) {
    bank.fll_ = truncated_normal({d, d}, 0.02, linear_rng, false);
  } else if (config.transform == TransformType::LLL) {
    bank.lll_ = truncated_normal({d, d}, 0.02, linear_rng, true);
  }
  const std::size_t m = config.fourier_count();
  Rng offset_rng(mix_seed(seed, 0x0FF));
  for (const auto& [layer, t] : bank.prompts_) {
    bank.offsets_[layer] =
        config.location == PromptLocation::Random
            ? static_cast<std::size_t>(offset_rng() % (config.length - m + 1))
            : 0;
  }
  return bank;
}

PromptBank PromptBank::from_tensors(const PromptConfig& config, const BackboneConfig& backbone,
                                    const NamedTensors& tensors) {
  config.validate(backbone.depth);
  PromptBank bank;
  const std::size_t m = config.fourier_count();
  const Tensor* offsets = tensors.find("prompt.offsets");
  std::size_t k = 0;
  if (config.length > 0) {
    for (std::size_t layer : config.insertion_layers(backbone.depth)) {
      const Tensor& t = tensors.at(layer_name(layer));
      if (t.shape() != Shape{config.length, backbone.width}) {
        throw ShapeError(layer_name(layer) + " has shape " + shape_str(t.shape()));
      }
      bank.prompts_[layer] = t.clone();
      bank.prompts_[layer].set_requires_grad(true);
      std::size_t offset = 0;
      if (offsets && k < offsets->numel()) offset = static_cast<std::size_t>(offsets->data()[k]);
      if (offset > config.length - m) throw ConfigError("prompt.offsets entry out of range");
      bank.offsets_[layer] = offset;
      ++k;
    }
  }
  if (config.transform == TransformType::FLL) {
    bank.fll_ = tensors.at("prompt.fll").detach();
  } else if (config.transform == TransformType::LLL) {
    bank.lll_ = tensors.at("prompt.lll").clone();
    bank.lll_.set_requires_grad(true);
  }
  return bank;
}

NamedTensors PromptBank::tensors() const {
  NamedTensors out = trainable();
  if (fll_.defined()) out.add("prompt.fll", fll_);
  if (!offsets_.empty()) {
    Buffer v;
    for (const auto& [layer, off] : offsets_) v.push_back(static_cast<double>(off));
    const std::size_t n = v.size();
    out.add("prompt.offsets", Tensor::from({n}, std::move(v)));
  }
  return out;
}

NamedTensors PromptBank::trainable() const {
  NamedTensors out;
  for (const auto& [layer, t] : prompts_) out.add(layer_name(layer), t);
  if (lll_.defined()) out.add("prompt.lll", lll_);
  return out;
}

const Tensor& PromptBank::layer(std::size_t layer) const {
  auto it = prompts_.find(layer);
  if (it == prompts_.end()) {
    throw ContractError("layer " + std::to_string(layer) + " owns no prompts");
  }
  return it->second;
}

std::size_t PromptBank::random_offset(std::size_t layer) const {
  auto it = offsets_.find(layer);
  return it == offsets_.end() ? 0 : it->second;
}

std::size_t PromptBank::prompt_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [layer, t] : prompts_) n += t.numel();
  return n;
}

std::size_t PromptBank::trainable_parameter_count() const {
  return prompt_parameter_count() + (lll_.defined() ? lll_.numel() : 0);
}

Tensor fll_transform(const Tensor& block, const Tensor& fixed_weight) {
  return matmul_transposed(block, fixed_weight);
}

Tensor lll_transform(const Tensor& block, const Tensor& learned_weight) {
  return matmul_transposed(block, learned_weight);
}

Tensor build_layer_prompts(const PromptBank& bank, const PromptConfig& config, std::size_t layer,
                           std::size_t depth) {
  const Tensor& raw = bank.layer(layer);
  const std::size_t total = config.length;
  const std::size_t m = config.fourier_count();
  const auto transformed = config.resolved_depth_set(depth);
  const bool in_depth_set =
      std::find(transformed.begin(), transformed.end(), layer) != transformed.end();
  if (config.transform == TransformType::None || !in_depth_set) return raw;

  std::size_t offset = 0;
  if (config.location == PromptLocation::Append) offset = total - m;
  if (config.location == PromptLocation::Random) offset = bank.random_offset(layer);
  if (config.transform == TransformType::FFT) {
    // Fused, so the block costs the same memory for every m.
    switch (config.dim_mode) {
      case DimMode::Both:
        return spectral::fourier_prompts(raw, m, offset);
      case DimMode::SequenceOnly:
        return spectral::fourier_prompts(raw, m, offset, spectral::Axis::Sequence);
      case DimMode::HiddenOnly:
        return spectral::fourier_prompts(raw, m, offset, spectral::Axis::Hidden);
    }
  }
  if (m == 0) return raw;

  Tensor fourier = apply_transform(m == total ? raw : slice(raw, 0, 0, m), config, bank);
  if (m == total) return fourier;
  Tensor plain = slice(raw, 0, m, total - m);
  switch (config.location) {
    case PromptLocation::Prepend:
      return concat({fourier, plain}, 0);
    case PromptLocation::Append:
      return concat({plain, fourier}, 0);
    case PromptLocation::Random: {
      std::vector<Tensor> parts;
      if (offset > 0) parts.push_back(slice(plain, 0, 0, offset));
      parts.push_back(fourier);
      if (offset < total - m) parts.push_back(slice(plain, 0, offset, total - m - offset));
      return concat(parts, 0);
    }
  }
  throw ContractError("unhandled prompt location");
}

Tensor insert_prompts(const Tensor& tokens, const Tensor& prompts, std::size_t batch) {
  if (!prompts.defined()) return tokens;
  const std::size_t m = prompts.dim(0);
  if (tokens.rank() != 2 || prompts.rank() != 2 || tokens.dim(1) != prompts.dim(1) ||
      batch == 0 || tokens.dim(0) % batch != 0) {
    throw ShapeError("insert_prompts: tokens " + shape_str(tokens.shape()) + " and prompts " +
                     shape_str(prompts.shape()) + " disagree for batch " + std::to_string(batch));
  }
  const std::size_t rows = tokens.dim(0) / batch;  // 1 + P
  Tensor pool = concat({tokens, prompts}, 0);
  std::vector<std::size_t> index;
  index.reserve(batch * (rows + m));
  for (std::size_t b = 0; b < batch; ++b) {
    index.push_back(b * rows);
    for (std::size_t j = 0; j < m; ++j) index.push_back(batch * rows + j);
    for (std::size_t i = 1; i < rows; ++i) index.push_back(b * rows + i);
  }
  return gather_rows(pool, std::move(index));
}

Tensor drop_prompts(const Tensor& tokens, std::size_t batch, std::size_t prompts) {
  if (prompts == 0) return tokens;
  const std::size_t seq = tokens.dim(0) / batch;
  if (seq <= prompts + 1 || seq * batch != tokens.dim(0)) {
    throw ShapeError("drop_prompts: " + shape_str(tokens.shape()) + " cannot hold " +
                     std::to_string(prompts) + " prompts per example");
  }
  std::vector<std::size_t> index;
  index.reserve(batch * (seq - prompts));
  for (std::size_t b = 0; b < batch; ++b) {
    index.push_back(b * seq);
    for (std::size_t i = 1 + prompts; i < seq; ++i) index.push_back(b * seq + i);
  }
  return gather_rows(tokens, std::move(index));
}

TunedOutput tuned_forward(const Backbone& backbone, const PromptBank& bank,
                          const PromptConfig& config, const ClassificationHead& head,
                          const Tensor& images) {
  const BackboneConfig& c = backbone.config();
  const std::size_t batch = images.dim(0);
  const std::size_t m = config.length;
  Tensor x = prepend_class_token(backbone, embed_patches(backbone, images), batch);
  std::size_t seq = 1 + c.num_patches();
  TunedOutput out;
  for (std::size_t layer = 1; layer <= c.depth; ++layer) {
    if (m > 0 && bank.has_layer(layer)) {
      if (seq != 1 + c.num_patches()) x = drop_prompts(x, batch, m);
      x = insert_prompts(x, build_layer_prompts(bank, config, layer, c.depth), batch);
      seq = 1 + m + c.num_patches();
    }
    LayerOutput lo = encoder_layer(backbone, layer, x, batch, seq);
    x = std::move(lo.tokens);
    out.attention.push_back(std::move(lo.attention));
    out.seq.push_back(seq);
  }
  out.logits = classify_head(head, class_features(backbone, x, batch, seq));
  return out;
}

ParameterCount count_parameters(std::size_t backbone_params, const PromptBank& bank,
                                const ClassificationHead* head) {
  ParameterCount pc;
  pc.tuned = bank.trainable_parameter_count() + (head ? head->parameter_count() : 0);
  pc.total = backbone_params + pc.tuned;
  pc.percent = pc.tuned == 0 ? 0.0
                             : 100.0 * static_cast<double>(pc.tuned) /
                                   static_cast<double>(pc.total);
  return pc;
}

ParameterCount count_parameters(const Backbone& backbone, const PromptBank& bank,
                                const ClassificationHead* head) {
  return count_parameters(backbone.encoder_parameter_count(), bank, head);
}

TunedModel TunedModel::create(const Backbone& backbone, const PromptConfig& prompt,
                              std::size_t num_classes, std::uint64_t seed) {
  if (!backbone.frozen()) throw ContractError("prompt tuning requires a frozen backbone");
  return {backbone, prompt, PromptBank::initialize(prompt, backbone.config(), seed),
          ClassificationHead::initialize(backbone.config().width, num_classes, seed)};
}

NamedTensors TunedModel::trainable() const {
  NamedTensors out = bank.trainable();
  out.add("head.weight", head.weight);
  out.add("head.bias", head.bias);
  return out;
}

NamedTensors TunedModel::tensors() const {
  NamedTensors out = bank.tensors();
  out.add("head.weight", head.weight);
  out.add("head.bias", head.bias);
  return out;
}

TunedModel TunedModel::from_tensors(const Backbone& backbone, const PromptConfig& prompt,
                                    const NamedTensors& tensors) {
  ClassificationHead head{tensors.at("head.weight").clone(), tensors.at("head.bias").clone()};
  head.weight.set_requires_grad(true);
  head.bias.set_requires_grad(true);
  if (head.weight.rank() != 2 || head.weight.dim(0) != backbone.config().width ||
      head.bias.numel() != head.weight.dim(1)) {
    throw ShapeError("classification head shape " + shape_str(head.weight.shape()) +
                     " does not match backbone width");
  }
  return {backbone, prompt, PromptBank::from_tensors(prompt, backbone.config(), tensors),
          std::move(head)};
}

TunedModel TunedModel::clone_tunable() const {
  return from_tensors(backbone, prompt, tensors());
}

}  // namespace vfpt
