// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "metatransfer/meta.hpp"
#include "metatransfer/model.hpp"
#include "metatransfer/params.hpp"
#include "metatransfer/rng.hpp"
#include "metatransfer/tasks.hpp"

namespace metatransfer {

enum class Strategy { uniform, fix, sample, first, last, recip, rl };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

/// Whether the strategy needs per-dataset loss feedback each step.
bool needs_feedback(Strategy s);

/// Denominator of the policy term at trajectory position g. `renorm` divides
/// by the mass not yet chosen (1 - prefix); `literal` divides by the mass of
/// the whole trajectory minus the prefix, which gives log 1 = 0 when G = 1.
enum class TrajectoryNorm { renorm, literal };

std::string_view to_string(TrajectoryNorm v);
TrajectoryNorm trajectory_norm_from_string(std::string_view s);

struct SamplerConfig {
  Strategy strategy = Strategy::uniform;
  double epsilon = 0.1;
  /// Linear annealing target for epsilon over `epsilon_anneal_steps`; equal
  /// to `epsilon` (the default) keeps it constant.
  double epsilon_final = 0.1;
  std::size_t epsilon_anneal_steps = 0;
  std::size_t trajectories = 4;
  /// Trajectory length G; 0 means the meta-batch size M.
  std::size_t horizon = 0;
  double gamma = 1e-3;
  TrajectoryNorm trajectory_norm = TrajectoryNorm::renorm;
  double baseline = 0.0;
  std::size_t hidden = 32;

  double epsilon_at(std::uint64_t step) const;
  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

struct DatasetFeedback {
  std::uint64_t step = 0;
  double l_original = 0.0;
  std::vector<double> l_sources;  // probe loss after pseudo-adapting on dataset j
  std::vector<double> rewards;    // D_j = l_original - l_sources[j]
  std::vector<double> previous_probs;

  std::size_t size() const noexcept { return rewards.size(); }
  void validate() const;
};

/// Pseudo-adapts the adapter groups on a fresh support batch from every
/// source dataset and scores each result on `probe`. `model` is not touched.
DatasetFeedback compute_feedback(const ModelParams& model, const Suite& suite,
                                 std::span<const MultiChoiceInstance> probe, double alpha,
                                 const FreezeMask& mask, std::size_t batch_size, Rng& rng);

/// Heuristic sampling distribution. FIRST and LAST put mass 1/M on the M
/// chosen indices and also report them in `chosen`.
struct HeuristicChoice {
  std::vector<double> probs;
  std::vector<std::size_t> chosen;
};

HeuristicChoice heuristic_probs(Strategy strategy, const DatasetFeedback& feedback,
                                const Suite& suite, std::size_t m);
HeuristicChoice heuristic_probs(Strategy strategy, std::span<const double> rewards,
                                std::span<const double> source_losses,
                                std::span<const std::size_t> sizes, std::size_t m);

/// LSTM over concat(D, P), a tanh feed-forward layer, and dot-product
/// attention against one learned key per dataset.
class Policy {
 public:
  Policy() = default;
  static Policy init(std::size_t k, std::size_t hidden, Rng& rng);
  Policy(std::size_t k, std::size_t hidden, ParamSet params);

  std::size_t num_datasets() const noexcept { return k_; }
  std::size_t hidden() const noexcept { return hidden_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  bool operator==(const Policy&) const = default;

 private:
  std::size_t k_ = 0;
  std::size_t hidden_ = 0;
  ParamSet params_;
};

struct PolicyState {
  Tensor h;  // 1 x hidden
  Tensor c;  // 1 x hidden

  static PolicyState zeros(std::size_t hidden);
  bool operator==(const PolicyState&) const = default;
};

struct PolicyOutput {
  Tensor probs;  // 1 x k
  PolicyState state;
};

PolicyOutput policy_forward(const Policy& policy, const PolicyState& state,
                            std::span<const double> feedback, std::span<const double> probs);

/// Gradient of sum(seed * P) with respect to every policy group, with the
/// incoming state held constant.
GradRecord policy_backward(const Policy& policy, const PolicyState& state,
                           std::span<const double> feedback, std::span<const double> probs,
                           std::span<const double> seed);

struct Trajectory {
  std::vector<std::size_t> actions;
  double logprob = 0.0;
  double reward = 0.0;
};

/// epsilon-greedy without replacement: at each position pick uniformly among
/// the remaining datasets with probability epsilon, else proportionally to P
/// restricted to the remaining datasets.
Trajectory sample_trajectory(std::span<const double> probs, std::size_t g, double epsilon,
                             Rng& rng);

double trajectory_logprob(std::span<const double> probs, std::span<const std::size_t> actions,
                          double epsilon, TrajectoryNorm variant);

/// d logprob / dP.
std::vector<double> trajectory_logprob_grad(std::span<const double> probs,
                                            std::span<const std::size_t> actions, double epsilon,
                                            TrajectoryNorm variant);

/// Mutable sampler state carried across meta-steps.
struct SamplerState {
  Policy policy;
  Optimizer optimizer;
  PolicyState lstm;
  std::vector<double> last_rewards;
  std::vector<double> last_probs;

  static SamplerState init(const SamplerConfig& config, std::size_t k, Rng& rng);
  bool operator==(const SamplerState&) const = default;
};

/// REINFORCE ascent on (1/N) sum_n (R_n - b) log f(tau_n), where P came from
/// policy_forward(state.policy, lstm, rewards_in, probs_in). Returns false if
/// the estimate was identically zero and nothing changed.
bool reinforce_update(SamplerState& state, const PolicyState& lstm,
                      std::span<const double> rewards_in, std::span<const double> probs_in,
                      std::span<const Trajectory> batch, double epsilon, TrajectoryNorm variant,
                      double baseline);

struct Choice {
  std::vector<std::size_t> datasets;
  std::vector<double> probs;  // distribution the choice was drawn from
  std::optional<DatasetFeedback> feedback;
};

/// Picks the M source datasets for one meta-step and advances the sampler.
Choice choose_datasets(const SamplerConfig& config, const MetaConfig& meta,
                       const ModelParams& model, const Suite& suite, SamplerState& state,
                       std::uint64_t step, Rng& rng);

}  // namespace metatransfer
