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

#include "vfpt/named_tensors.hpp"

#include "vfpt/errors.hpp"

namespace vfpt {

void NamedTensors::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate tensor name '" + name + "'");
  if (!tensor.defined()) throw ContractError("undefined tensor for '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor* NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

Tensor* NamedTensors::find(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& NamedTensors::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw ContractError("no tensor named '" + name + "'");
  return *t;
}

Tensor& NamedTensors::at(const std::string& name) {
  Tensor* t = find(name);
  if (!t) throw ContractError("no tensor named '" + name + "'");
  return *t;
}

void NamedTensors::merge(const NamedTensors& other) {
  for (const auto& [n, t] : other) add(n, t);
}

NamedTensors NamedTensors::with_prefix_stripped(const std::string& prefix) const {
  NamedTensors out;
  for (const auto& [n, t] : entries_) {
    if (n.compare(0, prefix.size(), prefix) == 0) out.add(n.substr(prefix.size()), t);
  }
  return out;
}

NamedTensors NamedTensors::with_prefix_added(const std::string& prefix) const {
  NamedTensors out;
  for (const auto& [n, t] : entries_) out.add(prefix + n, t);
  return out;
}

std::size_t NamedTensors::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

std::uint64_t NamedTensors::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [n, t] : entries_) {
    h = checksum_bytes({reinterpret_cast<const std::uint8_t*>(n.data()), n.size()}, h);
    const auto d = t.data();
    h = checksum_bytes({reinterpret_cast<const std::uint8_t*>(d.data()),
                        d.size() * sizeof(double)},
                       h);
  }
  return h;
}

NamedTensors NamedTensors::clone() const {
  NamedTensors out;
  for (const auto& [n, t] : entries_) out.add(n, t.clone());
  return out;
}

}  // namespace vfpt
