// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "metatransfer/params.hpp"
#include "metatransfer/rng.hpp"
#include "metatransfer/tape.hpp"
#include "metatransfer/tensor.hpp"

namespace metatransfer {

/// One multiple-choice question: a context feature vector, N candidate
/// feature vectors (one per row) and the index of the correct candidate.
struct MultiChoiceInstance {
  Tensor context;     // 1 x F
  Tensor candidates;  // N x F
  std::size_t label = 0;
  std::uint64_t id = 0;

  std::size_t num_candidates() const noexcept { return candidates.rows(); }
  void validate() const;

  bool operator==(const MultiChoiceInstance&) const = default;
};

/// How the adapter residual is wired.
///   residual_outside: AP(h) = up(ReLU(down(h))) + h
///   literal:          AP(h) = up(ReLU(down(h)) + h), only valid when d == H
enum class AdapterVariant { residual_outside, literal };

std::string_view to_string(AdapterVariant v);
AdapterVariant adapter_variant_from_string(std::string_view s);

struct ModelShape {
  std::size_t feature_dim = 16;
  std::size_t hidden = 32;
  std::size_t adapter_dim = 8;
  std::size_t layers = 2;
  AdapterVariant adapter_variant = AdapterVariant::residual_outside;
  /// Scale of the random backbone weights relative to 1/sqrt(fan_in).
  double backbone_gain = 0.3;

  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

/// Scoring model parameters: input projection and encoder layers (backbone),
/// one adapter per encoder layer, and the tanh-MLP scoring head.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelShape shape, ParamSet params);

  static ModelParams init(const ModelShape& shape, Rng& rng);

  const ModelShape& shape() const noexcept { return shape_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  struct LayerIndex {
    std::size_t W, b;
  };
  struct AdapterIndex {
    std::size_t down_W, down_b, up_W, up_b;
  };
  struct HeadIndex {
    std::size_t W1, b1, W2;
  };

  LayerIndex input() const { return input_; }
  LayerIndex layer(std::size_t l) const { return layers_.at(l); }
  AdapterIndex adapter(std::size_t l) const { return adapters_.at(l); }
  HeadIndex head() const { return head_; }

  bool operator==(const ModelParams& other) const {
    return shape_ == other.shape_ && params_ == other.params_;
  }

 private:
  void index_groups();

  ModelShape shape_;
  ParamSet params_;
  LayerIndex input_{};
  std::vector<LayerIndex> layers_;
  std::vector<AdapterIndex> adapters_;
  HeadIndex head_{};
};

// Freeze masks used by the training modes.
FreezeMask adapter_mask(const ModelParams& model, bool with_head);
FreezeMask last_layer_mask(const ModelParams& model, bool with_head);
FreezeMask full_mask(const ModelParams& model);

struct AdapterWeights {
  const Tensor& down_W;
  const Tensor& down_b;
  const Tensor& up_W;
  const Tensor& up_b;
};

Tensor adapter_forward(const Tensor& h, const AdapterWeights& adapter,
                       AdapterVariant variant = AdapterVariant::residual_outside);

/// [CLS]-analog representation of candidate `i`.
Tensor encode(const MultiChoiceInstance& instance, std::size_t i, const ModelParams& model);

/// Softmax distribution over the instance's candidates.
Tensor score_candidates(const MultiChoiceInstance& instance, const ModelParams& model);

/// argmax of score_candidates; ties resolve to the lowest index.
std::size_t predict(const MultiChoiceInstance& instance, const ModelParams& model);
std::vector<std::size_t> predict(std::span<const MultiChoiceInstance> batch,
                                 const ModelParams& model);

struct LossAndGrad {
  double loss = 0.0;
  GradRecord grads;
};

/// Mean cross-entropy over the batch and its gradient for every group the
/// mask leaves trainable.
LossAndGrad batch_loss(std::span<const MultiChoiceInstance> batch, const ModelParams& model,
                       const FreezeMask& mask);

/// Loss only.
double batch_loss_value(std::span<const MultiChoiceInstance> batch, const ModelParams& model);

}  // namespace metatransfer
