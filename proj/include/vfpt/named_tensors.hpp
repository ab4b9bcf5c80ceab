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

#include <string>
#include <utility>
#include <vector>

#include "vfpt/tensor.hpp"

namespace vfpt {

/// Insertion-ordered collection of uniquely named tensors.
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const Tensor* find(const std::string& name) const;
  Tensor* find(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  /// Appends every entry of `other`; names must not collide.
  void merge(const NamedTensors& other);
  /// Entries whose names start with `prefix`, with the prefix stripped.
  NamedTensors with_prefix_stripped(const std::string& prefix) const;
  NamedTensors with_prefix_added(const std::string& prefix) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t total_elements() const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Order-sensitive checksum over names and values.
  std::uint64_t checksum() const;
  /// Deep copy.
  NamedTensors clone() const;

 private:
  std::vector<Entry> entries_;
};

}  // namespace vfpt
