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

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vfpt/errors.hpp"
#include "vfpt/ops.hpp"

namespace vfpt {
namespace {

using testing::grad_check;
using testing::random_tensor;

BackboneConfig small_config() {
  BackboneConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

TEST(BackboneConfig, RejectsIndivisibleShapes) {
  BackboneConfig c;
  c.patch_size = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = BackboneConfig{};
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(BackboneConfig{}.validate());
}

TEST(Embed, SixteenPatchesForDeskImage) {
  const auto bb = Backbone::initialize(BackboneConfig{}, 1);
  std::mt19937_64 rng(1);
  auto image = random_tensor({1, 32, 32}, rng, false, 0.0, 1.0);
  auto tokens = embed(bb, image);
  EXPECT_EQ(tokens.shape(), (Shape{16, 64}));
}

TEST(Embed, ZeroImageGivesPositionEmbeddings) {
  const auto bb = Backbone::initialize(BackboneConfig{}, 2);
  auto tokens = embed(bb, Tensor::zeros({1, 32, 32}));
  const auto& pos = bb.param("pos");
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(tokens.at({i, j}), pos.at({i + 1, j}));
  }
}

TEST(Embed, IdenticalImagesGiveIdenticalTokens) {
  const auto bb = Backbone::initialize(BackboneConfig{}, 3);
  std::mt19937_64 rng(3);
  auto image = random_tensor({1, 32, 32}, rng, false, 0.0, 1.0);
  EXPECT_EQ(checksum(embed(bb, image)), checksum(embed(bb, image.clone())));
}

TEST(Embed, WrongSpatialSizeIsShapeError) {
  const auto bb = Backbone::initialize(BackboneConfig{}, 4);
  EXPECT_THROW(embed(bb, Tensor::zeros({1, 24, 24})), ShapeError);
  EXPECT_THROW(embed(bb, Tensor::zeros({3, 32, 32})), ShapeError);
}

TEST(Embed, PatchOrderIsRowMajorOverTheGrid) {
  // A single lit pixel in patch (row 1, col 2) only changes token 1 * 4 + 2.
  const auto bb = Backbone::initialize(BackboneConfig{}, 5);
  auto image = Tensor::zeros({1, 32, 32});
  image.mutable_data()[(8 + 3) * 32 + 16 + 5] = 1.0;
  auto lit = embed(bb, image);
  auto dark = embed(bb, Tensor::zeros({1, 32, 32}));
  for (std::size_t t = 0; t < 16; ++t) {
    bool same = true;
    for (std::size_t j = 0; j < 64; ++j) same = same && lit.at({t, j}) == dark.at({t, j});
    EXPECT_EQ(same, t != 6) << "token " << t;
  }
}

TEST(EncoderLayer, AttentionRowsAreDistributions) {
  const auto bb = Backbone::initialize(BackboneConfig{}, 6);
  std::mt19937_64 rng(6);
  auto tokens = random_tensor({2 * 21, 64}, rng, false);
  auto out = encoder_layer(bb, 3, tokens, 2, 21);
  ASSERT_EQ(out.attention.shape(), (Shape{2, 4, 21, 21}));
  const auto p = out.attention.data();
  for (std::size_t r = 0; r < 2 * 4 * 21; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 21; ++j) {
      EXPECT_GE(p[r * 21 + j], 0.0);
      s += p[r * 21 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(encoder_layer(bb, 0, tokens, 2, 21), BoundsError);
  EXPECT_THROW(encoder_layer(bb, 7, tokens, 2, 21), BoundsError);
}

TEST(EncoderLayer, GradientMatchesFiniteDifferences) {
  auto bb = Backbone::initialize(small_config(), 7);
  std::mt19937_64 rng(7);
  auto tokens = random_tensor({2 * 5, 16}, rng);
  auto w = random_tensor({2 * 5, 16}, rng, false);
  std::vector<Tensor> leaves{tokens, bb.param("layer1.attn.qkv.weight"),
                             bb.param("layer1.mlp.fc1.weight"), bb.param("layer1.ln2.gain")};
  auto r = grad_check([&] { return dot(encoder_layer(bb, 1, tokens, 2, 5).tokens, w); },
                      leaves);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(PretrainForward, LogitsShapeAndRandomBaseline) {
  auto bb = Backbone::initialize(BackboneConfig{}, 8);
  bb.freeze();
  std::mt19937_64 rng(8);
  const std::size_t batch = 64;
  auto images = random_tensor({batch, 1, 32, 32}, rng, false, 0.0, 1.0);
  auto logits = pretrain_forward(bb, images);
  ASSERT_EQ(logits.shape(), (Shape{batch, 4}));
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng() % 4);
  EXPECT_NEAR(cross_entropy(logits, labels).item(), std::log(4.0), 0.1);
}

TEST(PretrainForward, FullNetworkGradientMatchesFiniteDifferences) {
  auto bb = Backbone::initialize(small_config(), 9);
  std::mt19937_64 rng(9);
  auto images = random_tensor({2, 1, 32, 32}, rng, false, 0.0, 1.0);
  const std::vector<int> labels{1, 3};
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : bb.parameters()) leaves.push_back(t);
  auto r = grad_check([&] { return cross_entropy(pretrain_forward(bb, images), labels); },
                      leaves, 1e-5, 1e-3, 7);
  EXPECT_GT(r.checked, 200u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backbone, FreezeDropsTrackingAndKeepsValues) {
  auto bb = Backbone::initialize(BackboneConfig{}, 10);
  const auto before = bb.checksum();
  bb.freeze();
  EXPECT_TRUE(bb.frozen());
  EXPECT_EQ(bb.checksum(), before);
  for (const auto& [name, t] : bb.parameters()) EXPECT_FALSE(t.requires_grad()) << name;
  auto logits = pretrain_forward(bb, Tensor::zeros({1, 1, 32, 32}));
  EXPECT_FALSE(logits.requires_grad());
}

TEST(Backbone, TensorRoundTripPreservesEverything) {
  auto bb = Backbone::initialize(small_config(), 11);
  auto copy = Backbone::from_tensors(bb.tensors());
  EXPECT_EQ(copy.config(), bb.config());
  EXPECT_EQ(copy.checksum(), bb.checksum());
  EXPECT_TRUE(copy.frozen());
}

TEST(Backbone, EncoderParameterCountMatchesLayout) {
  const BackboneConfig c = small_config();
  const auto bb = Backbone::initialize(c, 12);
  const std::size_t d = c.width, h = c.mlp_width();
  const std::size_t per_layer =
      4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d);
  const std::size_t expect = c.patch_dim() * d + d + d + (1 + c.num_patches()) * d +
                             c.depth * per_layer + 2 * d;
  EXPECT_EQ(bb.encoder_parameter_count(), expect);
}

}  // namespace
}  // namespace vfpt
