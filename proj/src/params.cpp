// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/params.hpp"

#include <algorithm>

#include "metatransfer/error.hpp"

namespace metatransfer {

std::string_view to_string(GroupRole role) {
  switch (role) {
    case GroupRole::backbone: return "backbone";
    case GroupRole::adapter: return "adapter";
    case GroupRole::head: return "head";
    case GroupRole::policy: return "policy";
  }
  return "unknown";
}

std::size_t ParamSet::add(std::string name, GroupRole role, Tensor value) {
  if (find(name)) throw Error(ErrorCode::invalid_argument, "duplicate parameter group " + name);
  groups_.push_back(ParamGroup{std::move(name), role, std::move(value)});
  return groups_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamSet::index(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw Error(ErrorCode::invalid_argument, "no parameter group named " + std::string(name));
}

FreezeMask FreezeMask::only(const ParamSet& params, std::initializer_list<GroupRole> roles) {
  FreezeMask mask(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const GroupRole r = params.group(i).role;
    mask.set(i, std::find(roles.begin(), roles.end(), r) != roles.end());
  }
  return mask;
}

bool FreezeMask::any() const {
  return std::find(flags_.begin(), flags_.end(), true) != flags_.end();
}

GradRecord GradRecord::zeros_like(const ParamSet& params) {
  GradRecord out;
  out.grads.reserve(params.size());
  for (const auto& g : params.groups()) out.grads.emplace_back(g.value.rows(), g.value.cols());
  return out;
}

void GradRecord::add_scaled(const GradRecord& other, double factor) {
  if (other.grads.size() != grads.size()) {
    throw Error(ErrorCode::shape_mismatch, "gradient records of different length");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require_shape(other.grads[i], grads[i].shape(), "gradient accumulation");
    auto dst = grads[i].values();
    const auto src = other.grads[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += factor * src[j];
  }
}

double GradRecord::squared_norm() const {
  double total = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) total += v * v;
  }
  return total;
}

void sgd_step(ParamSet& params, const GradRecord& grads, const FreezeMask& mask, double rate) {
  if (grads.grads.size() != params.size() || mask.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "sgd_step: parameter, gradient and mask sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.trainable(i)) continue;
    auto p = params.value(i).values();
    const auto g = grads.grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= rate * g[j];
  }
}

}  // namespace metatransfer
