// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "metatransfer/tensor.hpp"

namespace metatransfer {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records a forward computation over the fixed primitive set used by the
/// scoring model and the sampling policy, then replays it in reverse to get
/// exact first-order gradients. There is no support for differentiating the
/// backward pass itself.
class Tape {
 public:
  Var constant(Tensor value);
  /// A leaf whose gradient is accumulated when `trainable` is set. Frozen
  /// leaves behave like constants and report an all-zero gradient.
  Var parameter(Tensor value, bool trainable = true);

  Var affine(Var x, Var W, Var b);
  Var linear(Var x, Var W);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var tanh(Var x);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  Var softmax(Var logits);
  Var sum(Var x);
  /// Mean cross-entropy over groups of rows of an R x 1 score column.
  /// Group g covers rows [offsets[g], offsets[g+1]) and its gold row is
  /// offsets[g] + labels[g].
  Var grouped_xent(Var scores, std::span<const std::size_t> offsets,
                   std::span<const std::size_t> labels);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward root with respect to `v`; zeros if `v`
  /// did not take part or is frozen.
  Tensor grad(Var v) const;

  /// Reverse sweep from a 1 x 1 root (seed 1) or from any node with an
  /// explicit upstream gradient of the node's shape.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

 private:
  enum class Op {
    leaf, affine, linear, add, mul, scale, tanh, relu, sigmoid,
    concat_cols, slice_cols, softmax, sum, grouped_xent
  };

  struct Node {
    Op op = Op::leaf;
    std::size_t in[3] = {0, 0, 0};
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    double factor = 0.0;
    std::size_t begin = 0;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> labels;
    Tensor aux;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  Tensor& grad_slot(std::size_t id);
  void propagate(std::size_t id);

  std::vector<Node> nodes_;
  bool has_backward_ = false;
};

}  // namespace metatransfer
