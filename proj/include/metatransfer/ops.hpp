// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "metatransfer/tensor.hpp"

// Value-level primitives. Every function is pure and works row-wise, so a
// 1 x n vector and an r x n batch of row vectors are handled identically.
namespace metatransfer::ops {

/// Returns x W^T + b for each row x. W is out x in, b is 1 x out.
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);
/// Returns x W^T for each row x.
Tensor linear(const Tensor& x, const Tensor& W);

Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

struct SoftmaxXent {
  Tensor probs;
  double loss = 0.0;
};

/// Softmax over a 1 x N logit vector and the negative log-probability of
/// `label`.
SoftmaxXent softmax_xent(const Tensor& logits, std::size_t label);

}  // namespace metatransfer::ops
