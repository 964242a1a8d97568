// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <vector>

#include "metatransfer/model.hpp"
#include "metatransfer/params.hpp"
#include "metatransfer/rng.hpp"
#include "metatransfer/tensor.hpp"

namespace metatransfer::testing {

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline MultiChoiceInstance random_instance(Rng& rng, std::size_t F, std::size_t N) {
  MultiChoiceInstance inst;
  inst.context = random_tensor(rng, 1, F);
  inst.candidates = random_tensor(rng, N, F);
  inst.label = rng.below(N);
  return inst;
}

inline std::vector<MultiChoiceInstance> random_batch(Rng& rng, std::size_t F, std::size_t n,
                                                     std::size_t N) {
  std::vector<MultiChoiceInstance> batch;
  for (std::size_t i = 0; i < n; ++i) batch.push_back(random_instance(rng, F, N));
  return batch;
}

/// Bitwise equality, so -0.0 != 0.0 and NaN payloads count.
inline bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

inline bool bit_identical(const ParamSet& a, const ParamSet& b, std::size_t group) {
  return bit_identical(a.value(group), b.value(group));
}

/// A model whose weights are all randomized (including the up-projections
/// that start at zero), so every gradient path is exercised.
inline ModelParams random_model(Rng& rng, ModelShape shape) {
  ModelParams model = ModelParams::init(shape, rng);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    for (auto& v : model.params().value(i).values()) v = 0.5 * rng.normal();
  }
  return model;
}

}  // namespace metatransfer::testing
