// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "metatransfer/error.hpp"

namespace metatransfer {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void record(GradCheckReport& report, GradCheckEntry entry, double tol) {
  report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
  if (!(entry.rel_error < tol)) report.passed = false;
  report.entries.push_back(std::move(entry));
}

}  // namespace

GradCheckReport grad_check(const std::function<double(const ParamSet&)>& f,
                           const ParamSet& params, const GradRecord& analytic,
                           const FreezeMask& mask, GradCheckOptions options) {
  if (analytic.grads.size() != params.size() || mask.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "grad_check: record does not match parameters");
  }
  GradCheckReport report;
  ParamSet probe = params;
  for (std::size_t g = 0; g < params.size(); ++g) {
    if (!mask.trainable(g)) continue;
    require_shape(analytic.grads[g], params.value(g).shape(), "grad_check");
    auto values = probe.value(g).values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f(probe);
      values[i] = saved - options.step;
      const double down = f(probe);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.grads[g][i];
      record(report,
             GradCheckEntry{params.group(g).name, i, a, numeric,
                            relative_error(a, numeric, options.floor)},
             options.tol);
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<double(const Tensor&)>& f, const Tensor& at,
                           const Tensor& analytic, GradCheckOptions options) {
  require_shape(analytic, at.shape(), "grad_check");
  GradCheckReport report;
  Tensor probe = at;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + options.step;
    const double up = f(probe);
    probe[i] = saved - options.step;
    const double down = f(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    record(report,
           GradCheckEntry{"tensor", i, analytic[i], numeric,
                          relative_error(analytic[i], numeric, options.floor)},
           options.tol);
  }
  return report;
}

}  // namespace metatransfer
