// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metatransfer/meta.hpp"
#include "metatransfer/model.hpp"
#include "metatransfer/sampler.hpp"
#include "metatransfer/tasks.hpp"
#include "metatransfer/train.hpp"

namespace metatransfer {

inline constexpr std::uint64_t kFormatVersion = 1;

/// Everything an experiment depends on. Serialized as flat `key=value` lines
/// with dotted keys; every key has a default and unknown keys are rejected.
struct RunConfig {
  SuiteConfig suite;
  ModelShape model;
  MetaConfig meta;
  SamplerConfig sampler;
  TrainMode train_mode = TrainMode::ctml;
  AdaptMode adapt_mode = AdaptMode::clml;
  std::uint64_t train_seed = 0;
  std::string output_dir = "out";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// All accepted keys, in serialization order.
std::vector<std::string> config_keys();
/// Sets one key from its text form; unknown keys and unparsable values raise
/// invalid_config naming the key.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);
/// Applies a `KEY=VALUE` override.
void apply_override(RunConfig& config, std::string_view assignment);

RunConfig parse_run_config(std::string_view text);
std::string format_run_config(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

/// Suite document: the generating config plus the resulting specs and
/// language shifts. Loading regenerates the suite and verifies it matches.
std::string suite_to_json(const Suite& suite);
Suite suite_from_json(std::string_view text);

/// Training-state snapshot. Per-step randomness is derived from
/// (config.train_seed, step), so the seed and step counter are the whole rng
/// state.
struct Checkpoint {
  RunConfig config;
  TrainState state;

  bool operator==(const Checkpoint&) const = default;
};

std::string checkpoint_to_json(const Checkpoint& checkpoint);
/// Raises version_mismatch or corrupt_file; never returns a partial state.
Checkpoint checkpoint_from_json(std::string_view text);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Source-side training. Starts fresh, or continues `resume`; stops once
/// `stop_at` steps have been taken or training finishes.
Checkpoint train_run(const RunConfig& config, const Suite& suite, MetricsLog& log,
                     const std::optional<Checkpoint>& resume = std::nullopt,
                     std::uint64_t stop_at = UINT64_MAX);

/// Best parameters of a checkpoint (the current ones if none was evaluated).
const ModelParams& checkpoint_model(const Checkpoint& checkpoint);

struct LanguageResult {
  std::size_t language = 0;
  double magnitude = 0.0;
  AdaptMode adapt = AdaptMode::none;
  double test_acc = 0.0;

  bool operator==(const LanguageResult&) const = default;
};

/// Adapts `model` to every language with config.adapt_mode and scores it on
/// that language's test pool.
std::vector<LanguageResult> evaluate_languages(const RunConfig& config, const Suite& suite,
                                               const ModelParams& model, MetricsLog& log);

struct RunResult {
  Checkpoint checkpoint;
  MetricsLog log;
  std::vector<LanguageResult> results;
};

RunResult run(const RunConfig& config);
RunResult run(const RunConfig& config, const Suite& suite);

std::string results_to_csv(std::span<const LanguageResult> results);
/// Writes config.txt, metrics.csv, checkpoint.json and results.csv.
void write_run(const RunResult& result, const std::filesystem::path& dir);

/// Config for repetition `r` of a seeded study: suite and train seeds are
/// both offset by r, so every strategy or subset sees the same suites.
RunConfig seeded(const RunConfig& config, std::uint64_t r);

struct StrategyRun {
  Strategy strategy = Strategy::uniform;
  std::uint64_t seed = 0;
  double best_dev = 0.0;
  double test_acc = 0.0;
  std::uint64_t steps = 0;
  /// Mean sampling probability per dataset over the last 100 steps.
  std::vector<double> tail_probs;
  /// (step, dev accuracy) at every evaluation.
  std::vector<std::pair<std::uint64_t, double>> dev_curve;
};

struct StrategySummary {
  Strategy strategy = Strategy::uniform;
  double mean_dev = 0.0;
  double mean_test = 0.0;
  double std_test = 0.0;
  std::size_t runs = 0;
};

struct SamplerComparison {
  std::vector<StrategyRun> runs;
  std::vector<StrategySummary> summary;

  std::string table_csv() const;
  std::string curves_csv() const;
};

/// One ctml training run with zero-shot test accuracy on the source-language
/// target test pool. `config` is already seeded; `label` is the repetition
/// index recorded in the result.
StrategyRun run_strategy(const RunConfig& config, const Suite& suite, Strategy strategy,
                         std::uint64_t label);
SamplerComparison compare_samplers(const RunConfig& config, std::span<const Strategy> strategies,
                                   std::span<const std::uint64_t> seeds);

struct AblationRow {
  std::size_t size = 0;
  std::vector<std::size_t> subset;
  std::vector<double> test_acc;  // one per seed
  double mean_test = 0.0;
  double std_test = 0.0;
};

/// Size 1 gives every single dataset, size k all of them, and any other size
/// one subset drawn from config.train_seed.
std::vector<std::vector<std::size_t>> ablation_subsets(const RunConfig& config, std::size_t size);
/// Copy of `suite` restricted to the listed source datasets.
Suite restrict_sources(const Suite& suite, std::span<const std::size_t> subset);
std::vector<AblationRow> ablate_adapters(const RunConfig& config, std::span<const std::size_t> sizes,
                                         std::span<const std::uint64_t> seeds);
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace metatransfer
