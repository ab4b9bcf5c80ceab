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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vfpt/ops.hpp"
#include "vfpt/prompt.hpp"
#include "vfpt/random.hpp"
#include "vfpt/runner.hpp"
#include "vfpt/spectral.hpp"

namespace vfpt::runner {
namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::vector<double> uniform_values(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor random_leaf(Shape shape, Rng& rng, bool grad = true) {
  const auto v = uniform_values(shape_numel(shape), rng);
  return Tensor::from(std::move(shape), Buffer(v.begin(), v.end()), grad);
}

SelftestCheck fft_oracle(Rng& rng) {
  double err = 0.0, inverse = 0.0, parseval = 0.0;
  for (std::size_t n = 1; n <= 200; ++n) {
    // Half the lengths are powers of two so the radix-2 path is exercised.
    const std::size_t len = n % 2 == 0 ? std::size_t{1} << (1 + n % 9) : n;
    spectral::ComplexBuffer x(uniform_values(len, rng), uniform_values(len, rng));
    const auto fast = spectral::fft(x);
    const auto slow = spectral::dft_naive(x);
    const auto back = spectral::ifft(fast);
    double ex = 0.0, ef = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      err = std::max({err, std::abs(fast.re[k] - slow.re[k]), std::abs(fast.im[k] - slow.im[k])});
      inverse = std::max({inverse, std::abs(back.re[k] - x.re[k]), std::abs(back.im[k] - x.im[k])});
      ex += x.re[k] * x.re[k] + x.im[k] * x.im[k];
      ef += fast.re[k] * fast.re[k] + fast.im[k] * fast.im[k];
    }
    parseval = std::max(parseval, std::abs(ef / static_cast<double>(len) - ex) / ex);
  }
  return {"fft_oracle", err < 1e-10 && inverse < 1e-10 && parseval < 1e-8,
          "max |fft - dft| " + sci(err) + ", inverse " + sci(inverse) + ", parseval " +
              sci(parseval)};
}

SelftestCheck fourier2d_oracle(Rng& rng) {
  double err = 0.0;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + trial % 7, d = 2 + trial % 11;
    const auto p = uniform_values(m * d, rng);
    const auto fast = spectral::real_fourier2d(p, m, d);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t l = 0; l < d; ++l) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            const double phase = two_pi * (static_cast<double>(k * i) / m +
                                           static_cast<double>(l * j) / d);
            acc += p[i * d + j] * std::cos(phase);
          }
        }
        err = std::max(err, std::abs(fast[k * d + l] - acc));
      }
    }
  }
  return {"fourier2d_oracle", err < 1e-10, "max error " + sci(err)};
}

SelftestCheck adjoint_identity(Rng& rng) {
  double worst = 0.0;
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + trial % 5, d = 3 + trial % 8;
    const auto p = uniform_values(m * d, rng);
    const auto g = uniform_values(m * d, rng);
    const auto fp = spectral::real_fourier2d(p, m, d);
    const auto ag = spectral::real_fourier2d_adjoint(g, m, d);
    double lhs = 0.0, rhs = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < m * d; ++i) {
      lhs += g[i] * fp[i];
      rhs += ag[i] * p[i];
      scale += std::abs(g[i] * fp[i]);
    }
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(scale, 1.0));
  }
  return {"adjoint_identity", worst < 1e-10, "max relative gap " + sci(worst)};
}

double grad_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                  std::size_t stride) {
  for (auto& t : leaves) t.zero_grad();
  backward(loss_fn());
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (auto& t : leaves) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

SelftestCheck op_gradients(Rng& rng) {
  auto x = random_leaf({3, 8}, rng);
  auto w = random_leaf({8, 8}, rng);
  auto b = random_leaf({8}, rng);
  auto gain = random_leaf({8}, rng);
  auto shift = random_leaf({8}, rng);
  auto p = random_leaf({4, 6}, rng);
  auto probe = random_leaf({3, 8}, rng, false);
  auto probe_p = random_leaf({4, 6}, rng, false);
  const std::vector<int> labels{1, 0, 7};
  const double e1 = grad_error(
      [&] {
        auto h = gelu(linear(x, w, b));
        h = layernorm(h, gain, shift);
        return add(cross_entropy(h, labels), dot(softmax(h, 1), probe));
      },
      {x, w, b, gain, shift}, 1);
  const double e2 = grad_error(
      [&] {
        return add(dot(spectral::fourier2d_real(p), probe_p),
                   dot(spectral::fourier1d_real(p, spectral::Axis::Hidden), probe_p));
      },
      {p}, 1);
  const double worst = std::max(e1, e2);
  return {"op_gradients", worst < 1e-4, "max relative error " + sci(worst)};
}

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

SelftestCheck tuned_gradients(std::uint64_t seed, Rng& rng) {
  auto bb = Backbone::initialize(tiny_backbone(), seed);
  bb.freeze();
  PromptConfig c;
  c.length = 3;
  c.alpha = 0.7;
  c.transform = TransformType::LLL;
  auto model = TunedModel::create(bb, c, 3, seed);
  const auto images = random_leaf({2, 1, 32, 32}, rng, false);
  const std::vector<int> labels{0, 2};
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : model.trainable()) leaves.push_back(t);
  const double worst = grad_error(
      [&] { return cross_entropy(model.forward(images).logits, labels); }, leaves, 5);
  return {"tuned_gradients", worst < 1e-4, "max relative error " + sci(worst)};
}

SelftestCheck alpha_zero_equivalence(std::uint64_t seed, Rng& rng) {
  auto bb = Backbone::initialize(tiny_backbone(), seed + 1);
  bb.freeze();
  const auto images = random_leaf({3, 1, 32, 32}, rng, false);
  PromptConfig fft;
  fft.length = 4;
  fft.alpha = 0.0;
  PromptConfig none = fft;
  none.alpha = 0.6;
  none.transform = TransformType::None;
  const auto a = TunedModel::create(bb, fft, 4, seed).forward(images).logits;
  const auto b = TunedModel::create(bb, none, 4, seed).forward(images).logits;
  const bool same = std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                               b.data().end());
  return {"alpha_zero_equivalence", same, same ? "logits bit-identical" : "logits differ"};
}

}  // namespace

std::vector<SelftestCheck> selftest(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5E1F));
  std::vector<SelftestCheck> checks;
  checks.push_back(fft_oracle(rng));
  checks.push_back(fourier2d_oracle(rng));
  checks.push_back(adjoint_identity(rng));
  checks.push_back(op_gradients(rng));
  checks.push_back(tuned_gradients(seed, rng));
  checks.push_back(alpha_zero_equivalence(seed, rng));
  return checks;
}

}  // namespace vfpt::runner
