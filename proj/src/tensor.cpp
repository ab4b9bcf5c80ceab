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

#include "vfpt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "vfpt/errors.hpp"

namespace vfpt {

namespace {

#if defined(__GLIBC__)
// Activation buffers are large and short-lived. Keep them on the heap
// instead of mapping and unmapping pages on every step.
const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

namespace {

std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};

void account(std::int64_t delta) {
  const std::int64_t now = g_live_bytes.fetch_add(delta) + delta;
  std::int64_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

std::int64_t bytes_of(std::size_t n) {
  return static_cast<std::int64_t>(n * sizeof(double));
}

}  // namespace

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

namespace memory {
std::int64_t live_bytes() { return g_live_bytes.load(); }
std::int64_t peak_bytes() { return g_peak_bytes.load(); }
void reset_peak() { g_peak_bytes.store(g_live_bytes.load()); }
}  // namespace memory

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

Node::Node(Shape s, Buffer v, bool track)
    : shape(std::move(s)), value(std::move(v)), requires_grad(track) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(value.size()) + " values");
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape));
  }
  account(bytes_of(value.size()));
}

Node::~Node() { account(-bytes_of(value.size() + grad.size())); }

Buffer& Node::grad_buffer() {
  if (grad.empty()) {
    grad.assign(value.size(), 0.0);
    account(bytes_of(grad.size()));
  }
  return grad;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, Buffer values,
                    bool requires_grad) {
  return Tensor(std::make_shared<detail::Node>(std::move(shape),
                                               std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw BoundsError("axis " + std::to_string(axis) + " out of range for " +
                      shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw BoundsError("index rank mismatch for " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) {
      throw BoundsError("index " + std::to_string(i) + " out of range on axis " +
                        std::to_string(axis) + " of " + shape_str(s));
    }
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  shape();
  if (node_->backward) {
    throw ContractError("requires_grad can only be changed on leaf tensors");
  }
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return from(shape(), node_->value, node_->requires_grad);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

const char* Tensor::op_name() const {
  shape();
  return node_->op;
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    g.order_.push_back(node);
    stack.pop_back();
  }
  return g;
}

BackwardStats backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a loss that does not depend on tracked tensors");
  }
  const Graph graph = Graph::trace(loss);
  loss.node()->grad_buffer()[0] += 1.0;
  BackwardStats stats;
  const auto& order = graph.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    ++stats.nodes_visited;
    if (node->backward) node->backward(*node);
  }
  // Release the recorded graph; only leaf gradients survive.
  for (auto* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
      account(-bytes_of(node->grad.size()));
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
  return stats;
}

std::uint64_t checksum_bytes(std::span<const std::uint8_t> bytes,
                             std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(const Tensor& t) {
  const auto d = t.data();
  return checksum_bytes({reinterpret_cast<const std::uint8_t*>(d.data()),
                         d.size() * sizeof(double)});
}

}  // namespace vfpt
