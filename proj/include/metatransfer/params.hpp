// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metatransfer/tensor.hpp"

namespace metatransfer {

enum class GroupRole { backbone, adapter, head, policy };

std::string_view to_string(GroupRole role);

struct ParamGroup {
  std::string name;
  GroupRole role = GroupRole::backbone;
  Tensor value;

  bool operator==(const ParamGroup&) const = default;
};

/// Named, ordered collection of trainable tensors.
class ParamSet {
 public:
  std::size_t add(std::string name, GroupRole role, Tensor value);

  std::size_t size() const noexcept { return groups_.size(); }
  const ParamGroup& group(std::size_t i) const { return groups_.at(i); }
  const Tensor& value(std::size_t i) const { return groups_.at(i).value; }
  Tensor& value(std::size_t i) { return groups_.at(i).value; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index(std::string_view name) const;

  const std::vector<ParamGroup>& groups() const noexcept { return groups_; }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<ParamGroup> groups_;
};

/// One trainable flag per group of a ParamSet.
class FreezeMask {
 public:
  FreezeMask() = default;
  explicit FreezeMask(std::size_t groups, bool trainable = false) : flags_(groups, trainable) {}

  static FreezeMask only(const ParamSet& params, std::initializer_list<GroupRole> roles);

  std::size_t size() const noexcept { return flags_.size(); }
  bool trainable(std::size_t i) const { return flags_.at(i); }
  void set(std::size_t i, bool trainable) { flags_.at(i) = trainable; }
  bool any() const;

  bool operator==(const FreezeMask&) const = default;

 private:
  std::vector<bool> flags_;
};

/// Per-group gradients, aligned with the ParamSet they were computed for.
/// Frozen groups hold all-zero tensors of the right shape.
struct GradRecord {
  std::vector<Tensor> grads;

  static GradRecord zeros_like(const ParamSet& params);
  void add_scaled(const GradRecord& other, double factor);
  double squared_norm() const;
};

/// params[i] -= rate * grads[i] for every trainable group.
void sgd_step(ParamSet& params, const GradRecord& grads, const FreezeMask& mask, double rate);

}  // namespace metatransfer
