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

#include "vfpt/random.hpp"

#include <cmath>
#include <numeric>

namespace vfpt {

Tensor truncated_normal(Shape shape, double std, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Buffer v(shape_numel(shape));
  for (auto& x : v) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    x = z * std;
  }
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Explicit Fisher-Yates: std::shuffle's draw pattern is unspecified.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace vfpt
