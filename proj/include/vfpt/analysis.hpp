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

// Loss landscape, Hessian spectrum and attention instruments over the
// trainable parameters of a tuned model.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vfpt/data.hpp"
#include "vfpt/prompt.hpp"

namespace vfpt::analysis {

struct AnalysisConfig {
  std::size_t resolution = 41;    // R, odd so that the grid has a center cell
  std::size_t subset_size = 512;  // training examples per loss evaluation
  std::size_t batch_size = 128;
  double tau = 0.01;              // convexity threshold
  double tolerance = 1e-3;        // relative eigenvalue tolerance
  std::size_t max_iterations = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Scalar objective over a flat parameter vector.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dimension() const = 0;
  virtual double value(std::span<const double> theta) const = 0;
  virtual void gradient(std::span<const double> theta, std::span<double> grad) const = 0;
};

/// L(theta) = 0.5 * theta^T A theta with a symmetric row-major A.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(std::size_t n, std::vector<double> matrix);
  static QuadraticObjective diagonal(std::span<const double> diag);

  std::size_t dimension() const override { return n_; }
  double value(std::span<const double> theta) const override;
  void gradient(std::span<const double> theta, std::span<double> grad) const override;
  const std::vector<double>& matrix() const { return a_; }

 private:
  std::size_t n_;
  std::vector<double> a_;
};

struct Subset {
  Dataset data;
  std::vector<std::size_t> indices;  // sorted positions in the source split
};

/// Seeded subset of at most `count` examples.
Subset fixed_subset(const Dataset& source, std::size_t count, std::uint64_t seed);

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Mean cross-entropy of a tuned model on a fixed dataset, as a function of
/// its trainable tensors laid out in TunedModel::trainable() order. Every
/// call works on a private copy, so the model itself is never written.
class ModelObjective final : public Objective {
 public:
  ModelObjective(const TunedModel& model, Dataset data, std::size_t batch_size);

  std::size_t dimension() const override { return dimension_; }
  double value(std::span<const double> theta) const override;
  void gradient(std::span<const double> theta, std::span<double> grad) const override;

  std::vector<double> parameters() const;
  const std::vector<TensorSlot>& layout() const { return layout_; }
  const Dataset& data() const { return data_; }

 private:
  TunedModel with_parameters(std::span<const double> theta) const;

  const TunedModel* model_;
  Dataset data_;
  std::size_t batch_size_;
  std::vector<TensorSlot> layout_;
  std::size_t dimension_ = 0;
};

struct TensorNorm {
  std::string name;
  double parameter_norm = 0.0;
  double raw_norm = 0.0;  // before normalization
};

struct Direction {
  std::vector<double> values;
  std::vector<TensorNorm> norms;
};

/// Gaussian direction rescaled per tensor to the norm of that tensor in
/// `theta`. Tensors with zero norm get a zero direction.
Direction random_direction(std::span<const TensorSlot> layout, std::span<const double> theta,
                           std::uint64_t seed);

struct GridCell {
  double a = 0.0;
  double b = 0.0;
  double value = 0.0;
  double lmax = 0.0;
  double lmin = 0.0;
  double ratio = 0.0;
  bool convex = false;
  bool converged = true;
};

struct AnalysisGrid {
  std::size_t resolution = 0;
  std::vector<double> axis;     // R coordinates spanning [-1, 1]
  std::vector<GridCell> cells;  // cells[i * R + j] has a = axis[i], b = axis[j]
  bool has_spectrum = false;
  double convex_fraction = 0.0;  // over converged cells
  std::size_t flagged = 0;       // cells whose eigen solve did not converge

  const GridCell& at(std::size_t i, std::size_t j) const { return cells[i * resolution + j]; }
};

/// R evenly spaced coordinates in [-1, 1]; the middle one is exactly 0.
std::vector<double> grid_axis(std::size_t resolution);

/// theta + a * d1 + b * d2, evaluated as theta + (a * d1 + b * d2).
std::vector<double> perturbed(std::span<const double> theta, std::span<const double> d1,
                              std::span<const double> d2, double a, double b);

/// Loss at theta + a * d1 + b * d2 over the grid.
AnalysisGrid landscape(const Objective& objective, std::span<const double> theta,
                       std::span<const double> d1, std::span<const double> d2,
                       std::size_t resolution);

/// (grad L(theta + eps v) - grad L(theta - eps v)) / (2 eps), eps = 1e-3 / |v|.
std::vector<double> hvp(const Objective& objective, std::span<const double> theta,
                        std::span<const double> v);

struct Eigenvalues {
  double lmax = 0.0;
  double lmin = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Extreme Hessian eigenvalues: power iteration for the spectral radius rho,
/// then power iterations on H + rho I and rho I - H. `seed` fixes the start
/// vectors.
Eigenvalues extreme_eigenvalues(const Objective& objective, std::span<const double> theta,
                                const AnalysisConfig& config, std::uint64_t seed);

/// Per-cell eigenvalues, ratio lmin / lmax and the convex flag
/// lmin >= -tau * |lmax|. Cells with lmax <= 0 get ratio = NaN and count as
/// non-convex.
AnalysisGrid convexity_map(const Objective& objective, std::span<const double> theta,
                           std::span<const double> d1, std::span<const double> d2,
                           const AnalysisConfig& config);

/// Header `a,b,value` or `a,b,value,lmax,lmin,ratio,convex`.
void write_grid_csv(std::ostream& out, const AnalysisGrid& grid);

struct AttentionMap {
  std::size_t size = 0;  // S = 1 + M + num_patches
  std::vector<double> values;  // [S, S] row-major, mean over heads
  std::size_t prompt_begin = 1;
  std::size_t patch_begin = 1;
  double prompt_column_mean = 0.0;  // mean entry in prompt columns
  double patch_column_mean = 0.0;   // mean entry in patch columns
};

/// Last-layer attention of one image ([C, H, W] or [1, C, H, W]) averaged
/// over heads.
AttentionMap attention_export(const TunedModel& model, const Tensor& image);

void write_attention_csv(std::ostream& out, const AttentionMap& map);
/// `class,0,1` style lines: segment name, begin, end (exclusive).
void write_segments(std::ostream& out, const AttentionMap& map);

struct PgmScaling {
  double min = 0.0;
  double max = 0.0;
};

/// Binary P5 graymap of a rows x cols matrix, min-max scaled to 0..255.
PgmScaling write_pgm(std::ostream& out, std::span<const double> values, std::size_t rows,
                     std::size_t cols);
void write_pgm_scaling(std::ostream& out, const PgmScaling& scaling);

}  // namespace vfpt::analysis
