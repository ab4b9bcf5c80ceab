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

#include "vfpt/backbone.hpp"

#include <cmath>

#include "vfpt/errors.hpp"
#include "vfpt/ops.hpp"
#include "vfpt/random.hpp"

namespace vfpt {

namespace {

constexpr double kInitStd = 0.02;
constexpr const char* kConfigEntry = "config";

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer) + "."; }

// Declares every parameter with its shape and initializer, in a fixed order.
template <typename Fn>
void for_each_param(const BackboneConfig& c, Fn&& fn) {
  const std::size_t d = c.width;
  enum Init { Weight, Zero, One };
  fn("patch.weight", Shape{c.patch_dim(), d}, Weight);
  fn("patch.bias", Shape{d}, Zero);
  fn("cls", Shape{1, d}, Weight);
  fn("pos", Shape{1 + c.num_patches(), d}, Weight);
  for (std::size_t i = 1; i <= c.depth; ++i) {
    const std::string p = layer_prefix(i);
    fn(p + "ln1.gain", Shape{d}, One);
    fn(p + "ln1.bias", Shape{d}, Zero);
    fn(p + "attn.qkv.weight", Shape{d, 3 * d}, Weight);
    fn(p + "attn.qkv.bias", Shape{3 * d}, Zero);
    fn(p + "attn.proj.weight", Shape{d, d}, Weight);
    fn(p + "attn.proj.bias", Shape{d}, Zero);
    fn(p + "ln2.gain", Shape{d}, One);
    fn(p + "ln2.bias", Shape{d}, Zero);
    fn(p + "mlp.fc1.weight", Shape{d, c.mlp_width()}, Weight);
    fn(p + "mlp.fc1.bias", Shape{c.mlp_width()}, Zero);
    fn(p + "mlp.fc2.weight", Shape{c.mlp_width(), d}, Weight);
    fn(p + "mlp.fc2.bias", Shape{d}, Zero);
  }
  fn("norm.gain", Shape{d}, One);
  fn("norm.bias", Shape{d}, Zero);
  fn("pretrain_head.weight", Shape{d, c.num_classes_pretrain}, Weight);
  fn("pretrain_head.bias", Shape{c.num_classes_pretrain}, Zero);
}

Buffer encode_config(const BackboneConfig& c) {
  return {static_cast<double>(c.image_size), static_cast<double>(c.patch_size),
          static_cast<double>(c.channels),   static_cast<double>(c.depth),
          static_cast<double>(c.width),      static_cast<double>(c.heads),
          static_cast<double>(c.mlp_ratio),  static_cast<double>(c.num_classes_pretrain)};
}

BackboneConfig decode_config(std::span<const double> v) {
  if (v.size() != 8) throw ConfigError("backbone config entry must hold 8 values");
  auto as_size = [](double x) {
    if (!(x >= 1.0) || x != std::floor(x)) {
      throw ConfigError("backbone config entry holds a non-integer value");
    }
    return static_cast<std::size_t>(x);
  };
  BackboneConfig c;
  c.image_size = as_size(v[0]);
  c.patch_size = as_size(v[1]);
  c.channels = as_size(v[2]);
  c.depth = as_size(v[3]);
  c.width = as_size(v[4]);
  c.heads = as_size(v[5]);
  c.mlp_ratio = as_size(v[6]);
  c.num_classes_pretrain = as_size(v[7]);
  return c;
}

}  // namespace

void BackboneConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) {
      throw ConfigError(std::string("backbone.") + key + " must be positive",
                        std::string("backbone.") + key);
    }
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(channels, "channels");
  positive(depth, "depth");
  positive(width, "width");
  positive(heads, "heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(num_classes_pretrain, "num_classes_pretrain");
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                          " is not divisible by patch_size " + std::to_string(patch_size),
                      "backbone.patch_size");
  }
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by heads " +
                          std::to_string(heads),
                      "backbone.heads");
  }
}

Backbone Backbone::initialize(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Backbone b;
  b.config_ = config;
  Rng rng(mix_seed(seed, 0xBB));
  for_each_param(config, [&](const std::string& name, Shape shape, int init) {
    Tensor t;
    if (init == 0) {
      t = truncated_normal(std::move(shape), kInitStd, rng, true);
    } else {
      t = Tensor::full(std::move(shape), init == 2 ? 1.0 : 0.0, true);
    }
    b.params_.add(name, std::move(t));
  });
  return b;
}

Backbone Backbone::from_tensors(const NamedTensors& tensors) {
  const Tensor* cfg = tensors.find(kConfigEntry);
  if (!cfg) throw ConfigError("backbone tensors lack a '" + std::string(kConfigEntry) + "' entry");
  Backbone b;
  b.config_ = decode_config(cfg->data());
  b.config_.validate();
  for_each_param(b.config_, [&](const std::string& name, const Shape& shape, int) {
    const Tensor* t = tensors.find(name);
    if (!t) throw ConfigError("backbone tensors lack '" + name + "'");
    if (t->shape() != shape) {
      throw ShapeError("backbone tensor '" + name + "' has shape " + shape_str(t->shape()) +
                       ", expected " + shape_str(shape));
    }
    b.params_.add(name, t->detach());
  });
  b.frozen_ = true;
  return b;
}

NamedTensors Backbone::tensors() const {
  NamedTensors out;
  out.add(kConfigEntry, Tensor::from({8}, encode_config(config_)));
  for (const auto& [n, t] : params_) out.add(n, t);
  return out;
}

void Backbone::freeze() {
  for (auto& [n, t] : params_) {
    t.zero_grad();
    t = t.detach();
  }
  frozen_ = true;
}

void Backbone::unfreeze() {
  for (auto& [n, t] : params_) t.set_requires_grad(true);
  frozen_ = false;
}

std::size_t Backbone::encoder_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.rfind("pretrain_head.", 0) != 0) n += t.numel();
  }
  return n;
}

Backbone Backbone::clone() const {
  Backbone b;
  b.config_ = config_;
  b.params_ = params_.clone();
  b.frozen_ = frozen_;
  return b;
}

Tensor select_images(const Tensor& images, const std::vector<std::size_t>& index) {
  return gather_rows(images, index);
}

Tensor embed_patches(const Backbone& backbone, const Tensor& images) {
  const BackboneConfig& c = backbone.config();
  if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.image_size ||
      images.dim(3) != c.image_size) {
    throw ShapeError("embed: expected images [B, " + std::to_string(c.channels) + ", " +
                     std::to_string(c.image_size) + ", " + std::to_string(c.image_size) +
                     "], got " + shape_str(images.shape()));
  }
  const std::size_t batch = images.dim(0);
  const std::size_t p = c.patch_size;
  const std::size_t g = c.grid();
  const std::size_t np = c.num_patches();
  const std::size_t pd = c.patch_dim();
  const std::size_t hw = c.image_size;
  const auto px = images.data();
  Buffer patches(batch * np * pd);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        double* dst = patches.data() + ((b * np) + gy * g + gx) * pd;
        for (std::size_t ch = 0; ch < c.channels; ++ch) {
          for (std::size_t y = 0; y < p; ++y) {
            const double* src = px.data() + ((b * c.channels + ch) * hw + gy * p + y) * hw + gx * p;
            for (std::size_t x = 0; x < p; ++x) *dst++ = src[x];
          }
        }
      }
    }
  }
  Tensor tokens = linear(Tensor::from({batch * np, pd}, std::move(patches)),
                         backbone.param("patch.weight"), backbone.param("patch.bias"));
  std::vector<std::size_t> pos_index(batch * np);
  for (std::size_t i = 0; i < pos_index.size(); ++i) pos_index[i] = 1 + i % np;
  return add(tokens, gather_rows(backbone.param("pos"), std::move(pos_index)));
}

Tensor embed(const Backbone& backbone, const Tensor& image) {
  if (image.rank() != 3) {
    throw ShapeError("embed: expected image [C, H, W], got " + shape_str(image.shape()));
  }
  Shape batched{1, image.dim(0), image.dim(1), image.dim(2)};
  return embed_patches(backbone, reshape(image, std::move(batched)));
}

Tensor prepend_class_token(const Backbone& backbone, const Tensor& patch_tokens,
                           std::size_t batch) {
  const std::size_t np = backbone.config().num_patches();
  if (patch_tokens.rank() != 2 || patch_tokens.dim(0) != batch * np) {
    throw ShapeError("prepend_class_token: tokens " + shape_str(patch_tokens.shape()) +
                     " do not hold " + std::to_string(batch) + " x " + std::to_string(np) +
                     " patches");
  }
  Tensor cls = add(backbone.param("cls"), slice(backbone.param("pos"), 0, 0, 1));
  Tensor pool = concat({patch_tokens, cls}, 0);
  std::vector<std::size_t> index;
  index.reserve(batch * (1 + np));
  for (std::size_t b = 0; b < batch; ++b) {
    index.push_back(batch * np);
    for (std::size_t i = 0; i < np; ++i) index.push_back(b * np + i);
  }
  return gather_rows(pool, std::move(index));
}

LayerOutput encoder_layer(const Backbone& backbone, std::size_t layer, const Tensor& tokens,
                          std::size_t batch, std::size_t seq) {
  const BackboneConfig& c = backbone.config();
  if (layer < 1 || layer > c.depth) {
    throw BoundsError("encoder layer " + std::to_string(layer) + " outside [1, " +
                      std::to_string(c.depth) + "]");
  }
  if (tokens.rank() != 2 || tokens.dim(0) != batch * seq || tokens.dim(1) != c.width) {
    throw ShapeError("encoder_layer: tokens " + shape_str(tokens.shape()) +
                     " do not match batch " + std::to_string(batch) + " x seq " +
                     std::to_string(seq) + " x width " + std::to_string(c.width));
  }
  const std::string p = layer_prefix(layer);
  auto w = [&](const char* name) -> const Tensor& { return backbone.param(p + name); };

  Tensor h = layernorm(tokens, w("ln1.gain"), w("ln1.bias"));
  AttentionOutput att =
      multihead_attention(linear(h, w("attn.qkv.weight"), w("attn.qkv.bias")), batch, seq,
                          c.heads);
  Tensor x = add(tokens, linear(att.out, w("attn.proj.weight"), w("attn.proj.bias")));
  h = layernorm(x, w("ln2.gain"), w("ln2.bias"));
  h = gelu(linear(h, w("mlp.fc1.weight"), w("mlp.fc1.bias")));
  x = add(x, linear(h, w("mlp.fc2.weight"), w("mlp.fc2.bias")));
  return {std::move(x), std::move(att.probs)};
}

Tensor class_features(const Backbone& backbone, const Tensor& tokens, std::size_t batch,
                      std::size_t seq) {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * seq;
  return layernorm(gather_rows(tokens, std::move(rows)), backbone.param("norm.gain"),
                   backbone.param("norm.bias"));
}

Tensor pretrain_forward(const Backbone& backbone, const Tensor& images) {
  const std::size_t batch = images.dim(0);
  const std::size_t seq = 1 + backbone.config().num_patches();
  Tensor x = prepend_class_token(backbone, embed_patches(backbone, images), batch);
  for (std::size_t i = 1; i <= backbone.config().depth; ++i) {
    x = encoder_layer(backbone, i, x, batch, seq).tokens;
  }
  return linear(class_features(backbone, x, batch, seq),
                backbone.param("pretrain_head.weight"), backbone.param("pretrain_head.bias"));
}

ClassificationHead ClassificationHead::initialize(std::size_t width, std::size_t classes,
                                                  std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4EAD));
  return {truncated_normal({width, classes}, kInitStd, rng, true),
          Tensor::zeros({classes}, true)};
}

std::size_t ClassificationHead::parameter_count() const {
  return weight.numel() + bias.numel();
}

Tensor classify_head(const ClassificationHead& head, const Tensor& features) {
  return linear(features, head.weight, head.bias);
}

}  // namespace vfpt
