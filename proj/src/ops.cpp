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

#include "vfpt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "vfpt/errors.hpp"

namespace vfpt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap cmap(const Buffer& v, std::size_t r, std::size_t c) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(r),
                     static_cast<Eigen::Index>(c));
}

MatMap wmap(Buffer& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r),
                static_cast<Eigen::Index>(c));
}

Eigen::Map<const Eigen::RowVectorXd> rowvec(const Buffer& v) {
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Wraps a freshly computed value as a graph node. The backward closure is
// only kept when some input is tracked.
Tensor make_result(Shape shape, Buffer value,
                   std::vector<Tensor> inputs, const char* op,
                   std::function<void(detail::Node&)> backward_fn) {
  bool track = false;
  for (const auto& t : inputs) track = track || (t.defined() && t.requires_grad());
  track = track && NoGradGuard::grad_enabled();
  auto node = std::make_shared<detail::Node>(std::move(shape), std::move(value), track);
  node->op = op;
  if (track) {
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

detail::Node& input(detail::Node& out, std::size_t i) { return *out.inputs[i]; }

bool wants_grad(detail::Node& out, std::size_t i) {
  return out.inputs[i] && out.inputs[i]->requires_grad;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw BoundsError("axis " + std::to_string(axis) + " out of range for " +
                      shape_str(s));
  }
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Buffer out(m * n);
  wmap(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
  return make_result({m, n}, std::move(out), {a, b}, "matmul",
                     [m, k, n](detail::Node& y) {
                       auto dy = cmap(y.grad, m, n);
                       auto& A = input(y, 0);
                       auto& B = input(y, 1);
                       if (A.requires_grad) {
                         wmap(A.grad_buffer(), m, k).noalias() +=
                             dy * cmap(B.value, k, n).transpose();
                       }
                       if (B.requires_grad) {
                         wmap(B.grad_buffer(), k, n).noalias() +=
                             cmap(A.value, m, k).transpose() * dy;
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t r = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match output width " + std::to_string(out_dim));
  }
  Buffer out(r * out_dim);
  auto y = wmap(out, r, out_dim);
  y.noalias() = cmap(x.node()->value, r, in) * cmap(w.node()->value, in, out_dim);
  if (has_bias) {
    y.rowwise() += rowvec(bias.node()->value);
  }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result({r, out_dim}, std::move(out), std::move(inputs), "linear",
                     [r, in, out_dim, has_bias](detail::Node& node) {
                       auto dy = cmap(node.grad, r, out_dim);
                       auto& X = input(node, 0);
                       auto& W = input(node, 1);
                       if (X.requires_grad) {
                         wmap(X.grad_buffer(), r, in).noalias() +=
                             dy * cmap(W.value, in, out_dim).transpose();
                       }
                       if (W.requires_grad) {
                         wmap(W.grad_buffer(), in, out_dim).noalias() +=
                             cmap(X.value, r, in).transpose() * dy;
                       }
                       if (has_bias && wants_grad(node, 2)) {
                         wmap(input(node, 2).grad_buffer(), 1, out_dim) +=
                             dy.colwise().sum();
                       }
                     });
}

Tensor matmul_transposed(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "matmul_transposed");
  require_rank(w, 2, "matmul_transposed");
  const std::size_t r = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("matmul_transposed: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  }
  Buffer out(r * out_dim);
  wmap(out, r, out_dim).noalias() =
      cmap(x.node()->value, r, in) * cmap(w.node()->value, out_dim, in).transpose();
  return make_result({r, out_dim}, std::move(out), {x, w}, "matmul_transposed",
                     [r, in, out_dim](detail::Node& node) {
                       auto dy = cmap(node.grad, r, out_dim);
                       auto& X = input(node, 0);
                       auto& W = input(node, 1);
                       if (X.requires_grad) {
                         wmap(X.grad_buffer(), r, in).noalias() +=
                             dy * cmap(W.value, out_dim, in);
                       }
                       if (W.requires_grad) {
                         wmap(W.grad_buffer(), out_dim, in).noalias() +=
                             dy.transpose() * cmap(X.value, r, in);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& y) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(y, k)) continue;
      auto& g = input(y, k).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& y) {
    if (wants_grad(y, 0)) {
      auto& g = input(y, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i];
    }
    if (wants_grad(y, 1)) {
      auto& g = input(y, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= y.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& y) {
    auto& A = input(y, 0);
    auto& B = input(y, 1);
    if (A.requires_grad) {
      auto& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i] * A.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  Buffer out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, "scale",
                     [factor](detail::Node& y) {
                       auto& g = input(y, 0).grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * y.grad[i];
                     });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_row");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (row.numel() != c) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " vs matrix " +
                     shape_str(x.shape()));
  }
  Buffer out(x.data().begin(), x.data().end());
  wmap(out, r, c).rowwise() += rowvec(row.node()->value);
  return make_result(x.shape(), std::move(out), {x, row}, "add_row",
                     [r, c](detail::Node& y) {
                       if (wants_grad(y, 0)) {
                         auto& g = input(y, 0).grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i];
                       }
                       if (wants_grad(y, 1)) {
                         wmap(input(y, 1).grad_buffer(), 1, c) +=
                             cmap(y.grad, r, c).colwise().sum();
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, "sum", [](detail::Node& y) {
    auto& g = input(y, 0).grad_buffer();
    for (auto& v : g) v += y.grad[0];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("dot: size mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  double s = 0.0;
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_result({1}, {s}, {a, b}, "dot", [](detail::Node& y) {
    auto& A = input(y, 0);
    auto& B = input(y, 1);
    const double g0 = y.grad[0];
    if (A.requires_grad) {
      auto& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * A.value[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  const auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(out), {x}, "gelu", [](detail::Node& y) {
    auto& X = input(y, 0);
    auto& g = X.grad_buffer();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = X.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += y.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [s](detail::Node& y) {
    auto& g = input(y, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double inner_prod = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          inner_prod += y.grad[base + j * s.inner] * y.value[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += y.value[k] * (y.grad[k] - inner_prod);
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layernorm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match last dimension of " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  Buffer out(xv.size());
  auto xhat = std::make_shared<Buffer>(xv.size());
  auto rstd = std::make_shared<Buffer>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, "layernorm",
                     [n, rows, xhat, rstd](detail::Node& y) {
                       auto& X = input(y, 0);
                       auto& G = input(y, 1);
                       auto& B = input(y, 2);
                       if (G.requires_grad) {
                         auto& gg = G.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j)
                             gg[j] += y.grad[r * n + j] * (*xhat)[r * n + j];
                       }
                       if (B.requires_grad) {
                         auto& gb = B.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += y.grad[r * n + j];
                       }
                       if (!X.requires_grad) return;
                       auto& gx = X.grad_buffer();
                       Buffer dh(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0;
                         double mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           dh[j] = y.grad[r * n + j] * G.value[j];
                           mean_dh += dh[j];
                           mean_dh_h += dh[j] * (*xhat)[r * n + j];
                         }
                         mean_dh /= static_cast<double>(n);
                         mean_dh_h /= static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                           gx[r * n + j] += (*rstd)[r] *
                                            (dh[j] - mean_dh - (*xhat)[r * n + j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  std::size_t batch = 1;
  std::size_t classes = 0;
  if (logits.rank() == 1) {
    classes = logits.dim(0);
  } else if (logits.rank() == 2) {
    batch = logits.dim(0);
    classes = logits.dim(1);
  } else {
    throw ShapeError("cross_entropy: logits must be [C] or [B, C], got " +
                     shape_str(logits.shape()));
  }
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  }
  const auto lv = logits.data();
  auto probs = std::make_shared<Buffer>(lv.size());
  std::vector<int> label_copy(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw BoundsError("cross_entropy: label " + std::to_string(label) +
                        " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = lv.data() + b * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) {
      (*probs)[b * classes + c] = std::exp(row[c] - log_z);
    }
    total += log_z - row[label];
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  return make_result({1}, {total * inv_batch}, {logits}, "cross_entropy",
                     [probs, label_copy, classes, inv_batch](detail::Node& y) {
                       auto& g = input(y, 0).grad_buffer();
                       const double g0 = y.grad[0] * inv_batch;
                       for (std::size_t b = 0; b < label_copy.size(); ++b) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double target =
                               static_cast<std::size_t>(label_copy[b]) == c ? 1.0 : 0.0;
                           g[b * classes + c] += g0 * ((*probs)[b * classes + c] - target);
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw BoundsError("concat: axis " + std::to_string(axis) + " out of range for " +
                      shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " +
                       shape_str(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const AxisSplit total = split_axis(out_shape, axis);
  Buffer out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    const std::size_t chunk = widths[p] * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk,
                  out.data() + o * total.n * total.inner + offset * total.inner);
    }
    offset += widths[p];
  }
  return make_result(std::move(out_shape), std::move(out), parts, "concat",
                     [widths, total](detail::Node& y) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < widths.size(); ++p) {
                         const std::size_t chunk = widths[p] * total.inner;
                         if (wants_grad(y, p)) {
                           auto& g = input(y, p).grad_buffer();
                           for (std::size_t o = 0; o < total.outer; ++o) {
                             const double* src =
                                 y.grad.data() + o * total.n * total.inner + offset * total.inner;
                             for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                           }
                         }
                         offset += widths[p];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (length == 0 || start >= s.n || length > s.n - start) {
    throw BoundsError("slice: range [" + std::to_string(start) + ", " +
                      std::to_string(start + length) + ") out of bounds on axis " +
                      std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.data();
  const std::size_t chunk = length * s.inner;
  Buffer out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * s.n * s.inner + start * s.inner, chunk,
                out.data() + o * chunk);
  }
  return make_result(std::move(out_shape), std::move(out), {x}, "slice",
                     [s, start, chunk](detail::Node& y) {
                       auto& g = input(y, 0).grad_buffer();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = g.data() + o * s.n * s.inner + start * s.inner;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += y.grad[o * chunk + i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape",
                     [](detail::Node& y) {
                       auto& g = input(y, 0).grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i];
                     });
}

Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  if (x.rank() < 1) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / rows;
  if (index.empty()) throw ContractError("gather_rows: empty index");
  for (auto i : index) {
    if (i >= rows) {
      throw BoundsError("gather_rows: row " + std::to_string(i) + " out of range for " +
                        shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  const auto xv = x.data();
  Buffer out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(xv.data() + index[r] * width, width, out.data() + r * width);
  }
  return make_result(std::move(out_shape), std::move(out), {x}, "gather_rows",
                     [index = std::move(index), width](detail::Node& y) {
                       auto& g = input(y, 0).grad_buffer();
                       for (std::size_t r = 0; r < index.size(); ++r) {
                         double* dst = g.data() + index[r] * width;
                         const double* src = y.grad.data() + r * width;
                         for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                       }
                     });
}

AttentionOutput multihead_attention(const Tensor& qkv, std::size_t batch,
                                    std::size_t seq, std::size_t heads) {
  require_rank(qkv, 2, "multihead_attention");
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0) {
    throw ShapeError("multihead_attention: qkv " + shape_str(qkv.shape()) +
                     " incompatible with batch " + std::to_string(batch) + ", seq " +
                     std::to_string(seq));
  }
  const std::size_t width = qkv.dim(1) / 3;
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("multihead_attention: width " + std::to_string(width) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t hd = width / heads;
  const auto S = static_cast<Eigen::Index>(seq);
  const auto H = static_cast<Eigen::Index>(hd);
  const Eigen::OuterStride<> qkv_stride(static_cast<Eigen::Index>(3 * width));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(width));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  const double* base = qkv.data().data();
  Buffer out(batch * seq * width);
  auto probs = Tensor::zeros({batch, heads, seq, seq});
  double* pbase = probs.mutable_data().data();
  RowMat scores(S, S);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* row0 = base + b * seq * 3 * width + h * hd;
      ConstStrided q(row0, S, H, qkv_stride);
      ConstStrided k(row0 + width, S, H, qkv_stride);
      ConstStrided v(row0 + 2 * width, S, H, qkv_stride);
      scores.noalias() = (q * k.transpose()) * inv_sqrt;
      MatMap p(pbase + (b * heads + h) * seq * seq, S, S);
      for (Eigen::Index i = 0; i < S; ++i) {
        const double mx = scores.row(i).maxCoeff();
        p.row(i) = (scores.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      Strided o(out.data() + b * seq * width + h * hd, S, H, out_stride);
      o.noalias() = p * v;
    }
  }
  Tensor result = make_result(
      {batch * seq, width}, std::move(out), {qkv}, "multihead_attention",
      [probs, batch, seq, heads, width, hd, inv_sqrt](detail::Node& y) {
        auto& X = input(y, 0);
        auto& g = X.grad_buffer();
        const auto S = static_cast<Eigen::Index>(seq);
        const auto H = static_cast<Eigen::Index>(hd);
        const Eigen::OuterStride<> qkv_stride(static_cast<Eigen::Index>(3 * width));
        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(width));
        const double* pbase = probs.data().data();
        RowMat dp(S, S);
        RowMat ds(S, S);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * seq * 3 * width + h * hd;
            ConstStrided q(X.value.data() + off, S, H, qkv_stride);
            ConstStrided k(X.value.data() + off + width, S, H, qkv_stride);
            ConstStrided v(X.value.data() + off + 2 * width, S, H, qkv_stride);
            Strided dq(g.data() + off, S, H, qkv_stride);
            Strided dk(g.data() + off + width, S, H, qkv_stride);
            Strided dv(g.data() + off + 2 * width, S, H, qkv_stride);
            ConstStrided dout(y.grad.data() + b * seq * width + h * hd, S, H, out_stride);
            ConstMatMap p(pbase + (b * heads + h) * seq * seq, S, S);
            dv.noalias() += p.transpose() * dout;
            dp.noalias() = dout * v.transpose();
            const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
            ds = p.array() * (dp.colwise() - row_dot).array();
            ds *= inv_sqrt;
            dq.noalias() += ds * k;
            dk.noalias() += ds.transpose() * q;
          }
        }
      });
  return {std::move(result), std::move(probs)};
}

}  // namespace vfpt
