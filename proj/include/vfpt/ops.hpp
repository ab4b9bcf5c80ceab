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
#include <span>
#include <vector>

#include "vfpt/tensor.hpp"

namespace vfpt {

// Differentiable operations. Every op records a backward closure when any
// input requires grad; gradients are only ever written for tracked inputs.

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[R, in] * w[in, out] + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Row-wise x * w^T for w[out, in].
Tensor matmul_transposed(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// x[R, C] + row[C] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor sum(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gain/bias.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-6);

/// Mean cross-entropy of logits[B, C] (or [C]) against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
/// out[i, :] = x[index[i], :] over the leading axis; backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index);

struct AttentionOutput {
  Tensor out;    // [batch * seq, width]
  Tensor probs;  // [batch, heads, seq, seq], untracked
};

/// Scaled dot-product self-attention over a fused qkv[batch * seq, 3 * width]
/// projection laid out as [q | k | v], heads split contiguously.
AttentionOutput multihead_attention(const Tensor& qkv, std::size_t batch,
                                    std::size_t seq, std::size_t heads);

}  // namespace vfpt
