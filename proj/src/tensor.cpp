// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "metatransfer/error.hpp"

namespace metatransfer {

std::string Shape::str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw Error(ErrorCode::shape_mismatch,
                "tensor of shape " + shape_.str() + " given " +
                    std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const Shape shape{1, values.size()};
  return Tensor(shape, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void require_shape(const Tensor& t, Shape expected, const char* what) {
  if (t.shape() != expected) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + ": expected " + expected.str() +
                                               ", got " + t.shape().str());
  }
}

}  // namespace metatransfer
