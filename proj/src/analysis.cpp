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

#include "vfpt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <random>

#include "vfpt/errors.hpp"
#include "vfpt/ops.hpp"
#include "vfpt/random.hpp"
#include "vfpt/train.hpp"

namespace vfpt::analysis {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_size(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw ShapeError(std::string(what) + " has " + std::to_string(v.size()) +
                     " entries, expected " + std::to_string(n));
  }
}

using LinearMap = std::function<void(std::span<const double>, std::span<double>)>;

struct PowerResult {
  double lambda = 0.0;  // Rayleigh quotient
  double radius = 0.0;  // |A v| for the final unit v
  std::size_t iterations = 0;
  bool converged = false;
};

// Power iteration on a symmetric map. Convergence is declared when the
// tracked estimate (the Rayleigh quotient, or |A v| when `track_radius`)
// moves by at most tol * max(|estimate|, scale).
PowerResult power_iteration(const LinearMap& apply, std::size_t n, Rng& rng, double tol,
                            std::size_t max_iterations, double scale, bool track_radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n), w(n);
  for (auto& x : v) x = normal(rng);
  const double v0 = norm(v);
  for (auto& x : v) x /= v0;
  PowerResult r;
  double previous = kNaN;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    apply(v, w);
    r.lambda = dot(v, w);
    r.radius = norm(w);
    r.iterations = it;
    if (r.radius == 0.0) {
      r.converged = true;
      return r;
    }
    if (!std::isfinite(r.radius)) return r;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / r.radius;
    const double estimate = track_radius ? r.radius : r.lambda;
    if (it > 1 && std::abs(estimate - previous) <= tol * std::max(std::abs(estimate), scale)) {
      r.converged = true;
      return r;
    }
    previous = estimate;
  }
  return r;
}

GridCell cell_at(const std::vector<double>& axis, std::size_t idx) {
  GridCell c;
  c.a = axis[idx / axis.size()];
  c.b = axis[idx % axis.size()];
  return c;
}

}  // namespace

void AnalysisConfig::validate() const {
  if (resolution == 0 || resolution % 2 == 0) {
    throw ConfigError("resolution must be odd", "analysis.resolution");
  }
  if (subset_size == 0) throw ConfigError("subset_size must be positive", "analysis.subset_size");
  if (batch_size == 0) throw ConfigError("batch_size must be positive", "analysis.batch_size");
  if (!(tau >= 0.0)) throw ConfigError("tau must be nonnegative", "analysis.tau");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive", "analysis.tolerance");
  if (max_iterations == 0) {
    throw ConfigError("max_iterations must be positive", "analysis.max_iterations");
  }
}

QuadraticObjective::QuadraticObjective(std::size_t n, std::vector<double> matrix)
    : n_(n), a_(std::move(matrix)) {
  if (a_.size() != n * n) throw ShapeError("quadratic fixture needs an n x n matrix");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (a_[i * n + j] != a_[j * n + i]) throw ContractError("quadratic fixture is not symmetric");
    }
  }
}

QuadraticObjective QuadraticObjective::diagonal(std::span<const double> diag) {
  const std::size_t n = diag.size();
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = diag[i];
  return {n, std::move(a)};
}

double QuadraticObjective::value(std::span<const double> theta) const {
  check_size(theta, n_, "theta");
  std::vector<double> g(n_);
  gradient(theta, g);
  return 0.5 * dot(theta, g);
}

void QuadraticObjective::gradient(std::span<const double> theta, std::span<double> grad) const {
  check_size(theta, n_, "theta");
  for (std::size_t i = 0; i < n_; ++i) {
    grad[i] = dot({a_.data() + i * n_, n_}, theta);
  }
}

Subset fixed_subset(const Dataset& source, std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1A5D));
  auto order = permutation(source.size(), rng);
  order.resize(std::min(count, source.size()));
  std::sort(order.begin(), order.end());
  Dataset data = source.subset(order);
  return {std::move(data), std::move(order)};
}

ModelObjective::ModelObjective(const TunedModel& model, Dataset data, std::size_t batch_size)
    : model_(&model), data_(std::move(data)), batch_size_(batch_size) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be positive", "analysis.batch_size");
  if (data_.size() == 0) throw ConfigError("analysis subset is empty", "analysis.subset_size");
  for (const auto& [name, t] : model.trainable()) {
    layout_.push_back({name, dimension_, t.numel()});
    dimension_ += t.numel();
  }
}

std::vector<double> ModelObjective::parameters() const {
  std::vector<double> theta;
  theta.reserve(dimension_);
  for (const auto& [name, t] : model_->trainable()) {
    theta.insert(theta.end(), t.data().begin(), t.data().end());
  }
  return theta;
}

TunedModel ModelObjective::with_parameters(std::span<const double> theta) const {
  check_size(theta, dimension_, "theta");
  TunedModel copy = model_->clone_tunable();
  NamedTensors params = copy.trainable();
  std::size_t k = 0;
  for (auto& [name, t] : params) {
    auto dst = t.mutable_data();
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(layout_[k].offset),
              theta.begin() + static_cast<std::ptrdiff_t>(layout_[k].offset + layout_[k].size),
              dst.begin());
    ++k;
  }
  return copy;
}

double ModelObjective::value(std::span<const double> theta) const {
  return evaluate(with_parameters(theta), data_, batch_size_).loss;
}

void ModelObjective::gradient(std::span<const double> theta, std::span<double> grad) const {
  check_size(grad, dimension_, "gradient");
  const TunedModel copy = with_parameters(theta);
  const std::size_t n = data_.size();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size_) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + batch_size_); ++i) idx.push_back(i);
    const auto labels = data_.batch_labels(idx);
    const Tensor loss = cross_entropy(copy.forward(data_.batch(idx)).logits, labels);
    backward(scale(loss, static_cast<double>(idx.size()) / static_cast<double>(n)));
  }
  std::size_t k = 0;
  for (const auto& [name, t] : copy.trainable()) {
    auto out = grad.subspan(layout_[k].offset, layout_[k].size);
    if (t.has_grad()) {
      std::copy(t.grad().begin(), t.grad().end(), out.begin());
    } else {
      std::fill(out.begin(), out.end(), 0.0);
    }
    ++k;
  }
}

Direction random_direction(std::span<const TensorSlot> layout, std::span<const double> theta,
                           std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xD1EC));
  std::normal_distribution<double> normal(0.0, 1.0);
  Direction d;
  d.values.resize(theta.size());
  for (auto& x : d.values) x = normal(rng);
  for (const auto& slot : layout) {
    auto dir = std::span<double>(d.values).subspan(slot.offset, slot.size);
    const double pn = norm(theta.subspan(slot.offset, slot.size));
    const double rn = norm(dir);
    for (auto& x : dir) x = rn > 0.0 ? x * (pn / rn) : 0.0;
    d.norms.push_back({slot.name, pn, rn});
  }
  return d;
}

std::vector<double> grid_axis(std::size_t resolution) {
  if (resolution == 0 || resolution % 2 == 0) {
    throw ConfigError("resolution must be odd", "analysis.resolution");
  }
  std::vector<double> axis(resolution, 0.0);
  if (resolution == 1) return axis;
  const double half = static_cast<double>(resolution - 1) / 2.0;
  for (std::size_t i = 0; i < resolution; ++i) {
    axis[i] = (static_cast<double>(i) - half) / half;
  }
  return axis;
}

std::vector<double> perturbed(std::span<const double> theta, std::span<const double> d1,
                              std::span<const double> d2, double a, double b) {
  check_size(d1, theta.size(), "direction 1");
  check_size(d2, theta.size(), "direction 2");
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = theta[i] + (a * d1[i] + b * d2[i]);
  return out;
}

AnalysisGrid landscape(const Objective& objective, std::span<const double> theta,
                       std::span<const double> d1, std::span<const double> d2,
                       std::size_t resolution) {
  check_size(theta, objective.dimension(), "theta");
  AnalysisGrid grid;
  grid.resolution = resolution;
  grid.axis = grid_axis(resolution);
  grid.cells.resize(resolution * resolution);
  parallel_for(grid.cells.size(), [&](std::size_t idx) {
    GridCell c = cell_at(grid.axis, idx);
    c.value = objective.value(perturbed(theta, d1, d2, c.a, c.b));
    grid.cells[idx] = c;
  });
  return grid;
}

std::vector<double> hvp(const Objective& objective, std::span<const double> theta,
                        std::span<const double> v) {
  const std::size_t n = objective.dimension();
  check_size(theta, n, "theta");
  check_size(v, n, "v");
  std::vector<double> out(n, 0.0);
  const double vn = norm(v);
  if (vn == 0.0) return out;
  const double eps = 1e-3 / vn;
  std::vector<double> plus(n), minus(n), g_plus(n), g_minus(n);
  for (std::size_t i = 0; i < n; ++i) {
    plus[i] = theta[i] + eps * v[i];
    minus[i] = theta[i] - eps * v[i];
  }
  objective.gradient(plus, g_plus);
  objective.gradient(minus, g_minus);
  for (std::size_t i = 0; i < n; ++i) out[i] = (g_plus[i] - g_minus[i]) / (2.0 * eps);
  return out;
}

Eigenvalues extreme_eigenvalues(const Objective& objective, std::span<const double> theta,
                                const AnalysisConfig& config, std::uint64_t seed) {
  const std::size_t n = objective.dimension();
  check_size(theta, n, "theta");
  Eigenvalues e;
  if (n == 0) {
    e.converged = true;
    return e;
  }
  Rng rng(mix_seed(seed, 0xE16));
  const LinearMap h = [&](std::span<const double> v, std::span<double> out) {
    const auto hv = hvp(objective, theta, v);
    std::copy(hv.begin(), hv.end(), out.begin());
  };
  // Spectral radius first; |H v| converges to it even when +rho and -rho
  // are both eigenvalues. H + rho I and rho I - H are then PSD with
  // dominant eigenvalues lmax + rho and rho - lmin.
  const PowerResult radius =
      power_iteration(h, n, rng, config.tolerance, config.max_iterations, 0.0, true);
  const double rho = radius.radius;
  auto shifted = [&](double sign) {
    return [&, sign](std::span<const double> v, std::span<double> out) {
      h(v, out);
      for (std::size_t i = 0; i < n; ++i) out[i] = sign * out[i] + rho * v[i];
    };
  };
  const PowerResult upper = power_iteration(shifted(1.0), n, rng, config.tolerance,
                                            config.max_iterations, 2.0 * rho, false);
  const PowerResult lower = power_iteration(shifted(-1.0), n, rng, config.tolerance,
                                            config.max_iterations, 2.0 * rho, false);
  e.lmax = upper.lambda - rho;
  e.lmin = rho - lower.lambda;
  e.iterations = radius.iterations + upper.iterations + lower.iterations;
  e.converged = radius.converged && upper.converged && lower.converged &&
                std::isfinite(e.lmax) && std::isfinite(e.lmin);
  return e;
}

AnalysisGrid convexity_map(const Objective& objective, std::span<const double> theta,
                           std::span<const double> d1, std::span<const double> d2,
                           const AnalysisConfig& config) {
  config.validate();
  check_size(theta, objective.dimension(), "theta");
  AnalysisGrid grid;
  grid.resolution = config.resolution;
  grid.axis = grid_axis(config.resolution);
  grid.cells.resize(grid.axis.size() * grid.axis.size());
  grid.has_spectrum = true;
  parallel_for(grid.cells.size(), [&](std::size_t idx) {
    GridCell c = cell_at(grid.axis, idx);
    const auto point = perturbed(theta, d1, d2, c.a, c.b);
    c.value = objective.value(point);
    const Eigenvalues e = extreme_eigenvalues(objective, point, config, mix_seed(config.seed, idx));
    c.lmax = e.lmax;
    c.lmin = e.lmin;
    c.converged = e.converged;
    if (e.lmax > 0.0) {
      c.ratio = e.lmin / e.lmax;
      c.convex = e.lmin >= -config.tau * std::abs(e.lmax);
    } else {
      c.ratio = kNaN;
      c.convex = false;
    }
    grid.cells[idx] = c;
  });
  std::size_t counted = 0, convex = 0;
  for (const auto& c : grid.cells) {
    if (!c.converged) {
      ++grid.flagged;
      continue;
    }
    ++counted;
    convex += c.convex;
  }
  grid.convex_fraction =
      counted == 0 ? kNaN : static_cast<double>(convex) / static_cast<double>(counted);
  return grid;
}

void write_grid_csv(std::ostream& out, const AnalysisGrid& grid) {
  out << (grid.has_spectrum ? "a,b,value,lmax,lmin,ratio,convex\n" : "a,b,value\n");
  out.precision(17);
  for (const auto& c : grid.cells) {
    out << c.a << ',' << c.b << ',' << c.value;
    if (grid.has_spectrum) {
      out << ',' << c.lmax << ',' << c.lmin << ',' << c.ratio << ',' << (c.convex ? 1 : 0);
    }
    out << '\n';
  }
}

AttentionMap attention_export(const TunedModel& model, const Tensor& image) {
  const bool single = image.rank() == 3 || (image.rank() == 4 && image.dim(0) == 1);
  if (!single) {
    throw ShapeError("attention_export expects one image [C, H, W] or [1, C, H, W], got " +
                     shape_str(image.shape()));
  }
  NoGradGuard no_grad;
  const Tensor batch = image.rank() == 4
                           ? image
                           : reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  const TunedOutput out = model.forward(batch);
  const Tensor& att = out.attention.back();
  const std::size_t heads = att.dim(1);
  const std::size_t s = att.dim(2);
  AttentionMap map;
  map.size = s;
  map.values.assign(s * s, 0.0);
  const auto src = att.data();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s * s; ++i) map.values[i] += src[h * s * s + i];
  }
  for (auto& v : map.values) v /= static_cast<double>(heads);
  const std::size_t patches = model.backbone.config().num_patches();
  map.prompt_begin = 1;
  map.patch_begin = s - patches;
  auto column_mean = [&](std::size_t begin, std::size_t end) {
    if (begin == end) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = begin; c < end; ++c) total += map.values[r * s + c];
    }
    return total / static_cast<double>(s * (end - begin));
  };
  map.prompt_column_mean = column_mean(map.prompt_begin, map.patch_begin);
  map.patch_column_mean = column_mean(map.patch_begin, s);
  return map;
}

void write_attention_csv(std::ostream& out, const AttentionMap& map) {
  out.precision(17);
  for (std::size_t r = 0; r < map.size; ++r) {
    for (std::size_t c = 0; c < map.size; ++c) {
      if (c) out << ',';
      out << map.values[r * map.size + c];
    }
    out << '\n';
  }
}

void write_segments(std::ostream& out, const AttentionMap& map) {
  out << "segment,begin,end\n";
  out << "class,0," << map.prompt_begin << '\n';
  out << "prompts," << map.prompt_begin << ',' << map.patch_begin << '\n';
  out << "patches," << map.patch_begin << ',' << map.size << '\n';
  out.precision(17);
  out << "# prompt_column_mean=" << map.prompt_column_mean
      << " patch_column_mean=" << map.patch_column_mean << '\n';
}

PgmScaling write_pgm(std::ostream& out, std::span<const double> values, std::size_t rows,
                     std::size_t cols) {
  check_size(values, rows * cols, "image");
  PgmScaling s;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  if (s.min > s.max) s.min = s.max = 0.0;
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  const double range = s.max - s.min;
  for (double v : values) {
    double t = range > 0.0 && std::isfinite(v) ? (v - s.min) / range : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  return s;
}

void write_pgm_scaling(std::ostream& out, const PgmScaling& scaling) {
  out.precision(17);
  out << "min " << scaling.min << "\nmax " << scaling.max << '\n';
}

}  // namespace vfpt::analysis
