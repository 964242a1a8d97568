// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metatransfer/error.hpp"

namespace metatransfer::ops {

namespace {

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  const auto in = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& W) {
  if (W.cols() != x.cols()) {
    throw Error(ErrorCode::shape_mismatch,
                "linear: weight " + W.shape().str() + " vs input " + x.shape().str());
  }
  Tensor out(x.rows(), W.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    auto yr = out.row(r);
    for (std::size_t o = 0; o < W.rows(); ++o) {
      const auto wo = W.row(o);
      double acc = 0.0;
      for (std::size_t i = 0; i < xr.size(); ++i) acc += wo[i] * xr[i];
      yr[o] = acc;
    }
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != W.rows()) {
    throw Error(ErrorCode::shape_mismatch,
                "affine: bias " + b.shape().str() + " vs weight " + W.shape().str());
  }
  Tensor out = linear(x, W);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto yr = out.row(r);
    for (std::size_t o = 0; o < yr.size(); ++o) yr[o] += b[o];
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

Tensor relu(const Tensor& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return map(x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto dst = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      dst[i] = std::exp(in[i] - mx);
      total += dst[i];
    }
    for (auto& v : dst) v /= total;
  }
  return out;
}

SoftmaxXent softmax_xent(const Tensor& logits, std::size_t label) {
  if (logits.rows() != 1) {
    throw Error(ErrorCode::shape_mismatch, "softmax_xent expects a row vector, got " +
                                               logits.shape().str());
  }
  if (label >= logits.cols()) {
    throw Error(ErrorCode::label_out_of_range, "label " + std::to_string(label) +
                                                   " with " + std::to_string(logits.cols()) +
                                                   " candidates");
  }
  SoftmaxXent out;
  out.probs = softmax(logits);
  // log-sum-exp form keeps the loss exact when probs[label] underflows.
  const auto in = logits.row(0);
  const double mx = *std::max_element(in.begin(), in.end());
  double total = 0.0;
  for (double v : in) total += std::exp(v - mx);
  out.loss = mx + std::log(total) - in[label];
  return out;
}

}  // namespace metatransfer::ops
