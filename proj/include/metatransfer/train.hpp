// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "metatransfer/meta.hpp"
#include "metatransfer/model.hpp"
#include "metatransfer/sampler.hpp"
#include "metatransfer/tasks.hpp"

namespace metatransfer {

enum class TrainMode { ctml, sequential, multitask };
enum class AdaptMode { none, clml, mono, target_only };

std::string_view to_string(TrainMode m);
TrainMode train_mode_from_string(std::string_view s);
std::string_view to_string(AdaptMode m);
AdaptMode adapt_mode_from_string(std::string_view s);

/// Everything a training run carries from one step to the next. Per-step
/// randomness is derived from (seed, step), so this is enough to resume.
struct TrainState {
  ModelParams model;
  ModelParams best;
  double best_dev = -1.0;
  std::size_t stale_evals = 0;
  Optimizer optimizer;
  SamplerState sampler;
  std::uint64_t step = 0;
  bool stopped = false;

  bool operator==(const TrainState&) const = default;
};

/// Source-side training loop (ctml, sequential or multitask). Dev accuracy on
/// the source-language target dev pool drives early stopping; the best
/// evaluated parameters are returned.
class Trainer {
 public:
  Trainer(TrainMode mode, const Suite& suite, const MetaConfig& meta,
          const SamplerConfig& sampler, std::uint64_t seed, ModelParams init);
  /// Resumes from a saved state.
  Trainer(TrainMode mode, const Suite& suite, const MetaConfig& meta,
          const SamplerConfig& sampler, std::uint64_t seed, TrainState state);

  /// Runs one step; returns false once training has finished.
  bool step(MetricsLog& log);
  /// Runs until finished or until `max_step` steps have been taken.
  void run(MetricsLog& log, std::uint64_t max_step = UINT64_MAX);

  bool finished() const;
  const TrainState& state() const noexcept { return state_; }
  /// Best evaluated parameters, or the current ones if nothing was evaluated.
  const ModelParams& result() const;

 private:
  void evaluate_dev(MetricsRecord& record);

  TrainMode mode_;
  const Suite& suite_;
  MetaConfig meta_;
  SamplerConfig sampler_;
  std::uint64_t seed_;
  TrainState state_;
};

ModelParams train(TrainMode mode, const Suite& suite, const MetaConfig& meta,
                  const SamplerConfig& sampler, std::uint64_t seed, const ModelParams& init,
                  MetricsLog& log);

/// Target-side adaptation for `language` (clml, mono or target_only) on that
/// language's dev pool. Runs meta.adapt_steps steps; 0 leaves params unchanged.
ModelParams adapt(AdaptMode mode, const ModelParams& params, const Suite& suite,
                  std::size_t language, const MetaConfig& meta, std::uint64_t seed,
                  MetricsLog& log);

/// Initial model for a run, drawn from its own stream of `seed`.
ModelParams initial_model(const ModelShape& shape, std::uint64_t seed);

}  // namespace metatransfer
