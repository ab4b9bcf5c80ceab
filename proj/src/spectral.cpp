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

#include "vfpt/spectral.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "vfpt/errors.hpp"

namespace vfpt::spectral {

namespace {

thread_local std::uint64_t t_butterflies = 0;

struct Twiddles {
  std::vector<double> cos;
  std::vector<double> sin;
};

// Half-length tables exp(-2 pi i k / n), k < n/2, computed directly per
// entry. Immutable once published.
std::shared_ptr<const Twiddles> twiddles_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const Twiddles>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto t = std::make_shared<Twiddles>();
  t->cos.resize(n / 2);
  t->sin.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
    t->cos[k] = std::cos(angle);
    t->sin[k] = std::sin(angle);
  }
  cache.emplace(n, t);
  return t;
}

void radix2_in_place(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const auto tw = twiddles_for(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = tw->cos[k * step];
        const double wi = tw->sin[k * step];
        const std::size_t a = start + k;
        const std::size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
    t_butterflies += n / 2;
  }
}

ComplexBuffer conjugate(ComplexBuffer x) {
  for (auto& v : x.im) v = -v;
  return x;
}

// Forward transform (sign -1) or its conjugate (sign +1), unnormalized.
ComplexBuffer transform(const ComplexBuffer& x, bool conjugate_kernel) {
  if (!conjugate_kernel) return fft(x);
  return conjugate(fft(conjugate(x)));
}

// Applies the (optionally conjugated) DFT along one axis of an m x d
// complex matrix stored as two row-major arrays.
void transform_axis(std::vector<double>& re, std::vector<double>& im, std::size_t m,
                    std::size_t d, Axis axis, bool conjugate_kernel) {
  if (axis == Axis::Hidden) {
    ComplexBuffer row(d);
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(re.begin() + r * d, d, row.re.begin());
      std::copy_n(im.begin() + r * d, d, row.im.begin());
      const ComplexBuffer out = transform(row, conjugate_kernel);
      std::copy(out.re.begin(), out.re.end(), re.begin() + r * d);
      std::copy(out.im.begin(), out.im.end(), im.begin() + r * d);
    }
    return;
  }
  ComplexBuffer col(m);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < m; ++r) {
      col.re[r] = re[r * d + c];
      col.im[r] = im[r * d + c];
    }
    const ComplexBuffer out = transform(col, conjugate_kernel);
    for (std::size_t r = 0; r < m; ++r) {
      re[r * d + c] = out.re[r];
      im[r * d + c] = out.im[r];
    }
  }
}

void check_block(std::size_t size, std::size_t m, std::size_t d) {
  if (m == 0 || d == 0 || size != m * d) {
    throw ShapeError("fourier block of " + std::to_string(size) +
                     " values does not match [" + std::to_string(m) + ", " +
                     std::to_string(d) + "]");
  }
}

std::vector<double> apply_real(const std::vector<double>& block, std::size_t m,
                               std::size_t d, std::initializer_list<Axis> axes,
                               bool conjugate_kernel) {
  check_block(block.size(), m, d);
  std::vector<double> re = block;
  std::vector<double> im(block.size(), 0.0);
  for (Axis a : axes) transform_axis(re, im, m, d, a, conjugate_kernel);
  return re;
}

Tensor make_fourier_op(const Tensor& block, std::vector<double> value,
                       std::function<std::vector<double>(const std::vector<double>&)> adjoint,
                       const char* name) {
  const bool track = block.requires_grad() && NoGradGuard::grad_enabled();
  auto node = std::make_shared<detail::Node>(block.shape(), Buffer(value.begin(), value.end()),
                                             track);
  node->op = name;
  if (track) {
    node->inputs.push_back(block.node());
    node->backward = [adjoint = std::move(adjoint)](detail::Node& y) {
      const std::vector<double> back = adjoint({y.grad.begin(), y.grad.end()});
      auto& g = y.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
    };
  }
  return Tensor(std::move(node));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected [m, d] block, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

ComplexBuffer::ComplexBuffer(std::vector<double> real, std::vector<double> imag)
    : re(std::move(real)), im(std::move(imag)) {
  if (re.size() != im.size()) {
    throw ShapeError("complex buffer with " + std::to_string(re.size()) +
                     " real and " + std::to_string(im.size()) + " imaginary parts");
  }
}

ComplexBuffer ComplexBuffer::from_real(std::vector<double> real) {
  const std::size_t n = real.size();
  return ComplexBuffer(std::move(real), std::vector<double>(n, 0.0));
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

ComplexBuffer dft_naive(const ComplexBuffer& x) {
  const std::size_t n = x.size();
  if (n == 0) throw ContractError("dft of an empty sequence");
  ComplexBuffer out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double sr = 0.0;
    double si = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce k*j mod n first so the angle stays within one period.
      const double angle = -2.0 * std::numbers::pi *
                           static_cast<double>((k * j) % n) / static_cast<double>(n);
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      sr += x.re[j] * c - x.im[j] * s;
      si += x.re[j] * s + x.im[j] * c;
    }
    out.re[k] = sr;
    out.im[k] = si;
  }
  return out;
}

ComplexBuffer fft(const ComplexBuffer& x) {
  if (x.size() == 0) throw ContractError("fft of an empty sequence");
  if (!is_power_of_two(x.size())) return dft_naive(x);
  ComplexBuffer out = x;
  radix2_in_place(out.re, out.im);
  return out;
}

ComplexBuffer ifft(const ComplexBuffer& x) {
  ComplexBuffer out = transform(x, /*conjugate_kernel=*/true);
  const double inv = 1.0 / static_cast<double>(x.size());
  for (auto& v : out.re) v *= inv;
  for (auto& v : out.im) v *= inv;
  return out;
}

std::uint64_t butterfly_count() { return t_butterflies; }
void reset_butterfly_count() { t_butterflies = 0; }

std::vector<double> real_fourier2d(const std::vector<double>& block, std::size_t m,
                                   std::size_t d, Order order) {
  if (order == Order::HiddenThenSequence) {
    return apply_real(block, m, d, {Axis::Hidden, Axis::Sequence}, false);
  }
  return apply_real(block, m, d, {Axis::Sequence, Axis::Hidden}, false);
}

std::vector<double> real_fourier2d_adjoint(const std::vector<double>& grad, std::size_t m,
                                           std::size_t d) {
  // The forward map is Re o F o embed; its transpose is Re o F^H o embed.
  return apply_real(grad, m, d, {Axis::Sequence, Axis::Hidden}, true);
}

std::vector<double> real_fourier1d(const std::vector<double>& block, std::size_t m,
                                   std::size_t d, Axis axis) {
  return apply_real(block, m, d, {axis}, false);
}

std::vector<double> real_fourier1d_adjoint(const std::vector<double>& grad, std::size_t m,
                                           std::size_t d, Axis axis) {
  return apply_real(grad, m, d, {axis}, true);
}

Tensor fourier2d_real(const Tensor& block) {
  require_matrix(block, "fourier2d_real");
  const std::size_t m = block.dim(0);
  const std::size_t d = block.dim(1);
  std::vector<double> in(block.data().begin(), block.data().end());
  return make_fourier_op(
      block, real_fourier2d(in, m, d),
      [m, d](const std::vector<double>& g) { return real_fourier2d_adjoint(g, m, d); },
      "fourier2d_real");
}

Tensor fourier1d_real(const Tensor& block, Axis axis) {
  require_matrix(block, "fourier1d_real");
  const std::size_t m = block.dim(0);
  const std::size_t d = block.dim(1);
  std::vector<double> in(block.data().begin(), block.data().end());
  return make_fourier_op(
      block, real_fourier1d(in, m, d, axis),
      [m, d, axis](const std::vector<double>& g) {
        return real_fourier1d_adjoint(g, m, d, axis);
      },
      "fourier1d_real");
}

Tensor fourier_prompts(const Tensor& prompts, std::size_t m, std::size_t offset,
                       std::optional<Axis> axis) {
  require_matrix(prompts, "fourier_prompts");
  const std::size_t total = prompts.dim(0);
  const std::size_t d = prompts.dim(1);
  if (m > total || offset > total - m) {
    throw ShapeError("fourier_prompts: block of " + std::to_string(m) + " rows at offset " +
                     std::to_string(offset) + " does not fit " + shape_str(prompts.shape()));
  }
  const auto src = prompts.data();
  // Output row r reads plain input row source_row(r) outside the Fourier block.
  auto source_row = [m, offset](std::size_t r) { return r < offset ? m + r : r; };
  Buffer out(total * d);
  if (m > 0) {
    const std::vector<double> head(src.begin(), src.begin() + m * d);
    const auto f = axis ? real_fourier1d(head, m, d, *axis) : real_fourier2d(head, m, d);
    std::copy(f.begin(), f.end(), out.begin() + offset * d);
  }
  for (std::size_t r = 0; r < total; ++r) {
    if (r >= offset && r < offset + m) continue;
    std::copy_n(src.begin() + source_row(r) * d, d, out.begin() + r * d);
  }

  const bool track = prompts.requires_grad() && NoGradGuard::grad_enabled();
  auto node = std::make_shared<detail::Node>(prompts.shape(), std::move(out), track);
  node->op = "fourier_prompts";
  if (track) {
    node->inputs.push_back(prompts.node());
    node->backward = [m, offset, axis, total, d, source_row](detail::Node& y) {
      auto& g = y.inputs[0]->grad_buffer();
      if (m > 0) {
        const std::vector<double> block(y.grad.begin() + offset * d,
                                        y.grad.begin() + (offset + m) * d);
        const auto back = axis ? real_fourier1d_adjoint(block, m, d, *axis)
                               : real_fourier2d_adjoint(block, m, d);
        for (std::size_t i = 0; i < m * d; ++i) g[i] += back[i];
      }
      for (std::size_t r = 0; r < total; ++r) {
        if (r >= offset && r < offset + m) continue;
        const std::size_t s = source_row(r);
        for (std::size_t j = 0; j < d; ++j) g[s * d + j] += y.grad[r * d + j];
      }
    };
  }
  return Tensor(std::move(node));
}

}  // namespace vfpt::spectral
