// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "metatransfer/params.hpp"
#include "metatransfer/tensor.hpp"

namespace metatransfer {

struct GradCheckEntry {
  std::string group;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

double relative_error(double analytic, double numeric, double floor);

/// Compares `analytic` against central differences of `f` for every
/// component of every trainable group.
GradCheckReport grad_check(const std::function<double(const ParamSet&)>& f,
                           const ParamSet& params, const GradRecord& analytic,
                           const FreezeMask& mask, GradCheckOptions options = {});

/// Single-tensor form.
GradCheckReport grad_check(const std::function<double(const Tensor&)>& f, const Tensor& at,
                           const Tensor& analytic, GradCheckOptions options = {});

}  // namespace metatransfer
