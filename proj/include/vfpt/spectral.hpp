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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "vfpt/tensor.hpp"

namespace vfpt::spectral {

/// Split real/imaginary storage of a complex sequence.
struct ComplexBuffer {
  std::vector<double> re;
  std::vector<double> im;

  ComplexBuffer() = default;
  explicit ComplexBuffer(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
  ComplexBuffer(std::vector<double> real, std::vector<double> imag);
  static ComplexBuffer from_real(std::vector<double> real);

  std::size_t size() const { return re.size(); }
};

/// Unnormalized forward DFT, X_k = sum_n x_n exp(-2 pi i k n / N), in O(N^2).
ComplexBuffer dft_naive(const ComplexBuffer& x);

/// Same transform as dft_naive. Power-of-two lengths use iterative radix-2
/// Cooley-Tukey; other lengths fall back to dft_naive.
ComplexBuffer fft(const ComplexBuffer& x);

/// Inverse of fft, carrying the 1/N factor.
ComplexBuffer ifft(const ComplexBuffer& x);

/// Butterfly multiply-add counter for the radix-2 path (per thread).
std::uint64_t butterfly_count();
void reset_butterfly_count();

bool is_power_of_two(std::size_t n);

enum class Axis { Sequence, Hidden };

/// Re(F_seq(F_h(P))) for a real [m, d] block. Differentiable; the backward
/// pass applies the exact adjoint, Re(conj(F_seq) conj(F_h) G).
Tensor fourier2d_real(const Tensor& block);

/// Re of a 1D DFT along one axis of a real [m, d] block. Differentiable.
Tensor fourier1d_real(const Tensor& block, Axis axis);

/// Assembles a prompt block in one differentiable op. Rows [0, m) of
/// `prompts` [M, d] go through the real DFT (2D when `axis` is empty, else
/// 1D) and land at rows [offset, offset + m); rows [m, M) fill the remaining
/// positions in order. m = 0 copies the input.
Tensor fourier_prompts(const Tensor& prompts, std::size_t m, std::size_t offset,
                       std::optional<Axis> axis = std::nullopt);

// Raw linear maps behind the tensor ops, for adjoint testing. `order`
// chooses which axis is transformed first; the results agree exactly in
// exact arithmetic.
enum class Order { HiddenThenSequence, SequenceThenHidden };
std::vector<double> real_fourier2d(const std::vector<double>& block, std::size_t m,
                                   std::size_t d,
                                   Order order = Order::HiddenThenSequence);
std::vector<double> real_fourier2d_adjoint(const std::vector<double>& grad,
                                           std::size_t m, std::size_t d);
std::vector<double> real_fourier1d(const std::vector<double>& block, std::size_t m,
                                   std::size_t d, Axis axis);
std::vector<double> real_fourier1d_adjoint(const std::vector<double>& grad,
                                           std::size_t m, std::size_t d, Axis axis);

}  // namespace vfpt::spectral
