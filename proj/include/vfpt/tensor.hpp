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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace vfpt {

using Shape = std::vector<std::size_t>;
/// Tensor storage, aligned for the widest SIMD loads.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One value in the computation. Leaves have no backward function; interior
// nodes keep references to their inputs until the graph is released.
struct Node {
  Node(Shape s, Buffer v, bool track);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Allocates the gradient buffer on first use (accounted in tensor memory).
  Buffer& grad_buffer();

  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// Copies share storage (handle semantics). Use clone() for a deep copy.
/// Operations on tensors that require grad record themselves into the
/// graph reachable from their result; backward() sweeps it once and then
/// releases the interior nodes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access. Only meaningful for leaves; writing into an
  // interior node after it was consumed invalidates the recorded graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy as a fresh leaf with the same requires_grad flag.
  Tensor clone() const;
  /// Deep copy as an untracked leaf.
  Tensor detach() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the tracked operations feeding a loss.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node*>& order() const { return order_; }

 private:
  std::vector<detail::Node*> order_;
};

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

/// Accumulates d(loss)/d(leaf) into every tracked leaf. Throws ContractError
/// for a non-scalar loss. Interior nodes are released afterwards.
BackwardStats backward(const Tensor& loss);

/// While alive, operations on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Live/peak bytes held by tensor value and gradient buffers.
namespace memory {
std::int64_t live_bytes();
std::int64_t peak_bytes();
void reset_peak();
}  // namespace memory

/// FNV-1a over the raw bytes of the values; used for freeze checks.
std::uint64_t checksum(const Tensor& t);
std::uint64_t checksum_bytes(std::span<const std::uint8_t> bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace vfpt
