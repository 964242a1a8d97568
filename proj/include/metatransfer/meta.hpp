// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metatransfer/model.hpp"
#include "metatransfer/params.hpp"
#include "metatransfer/tasks.hpp"

namespace metatransfer {

enum class OptimizerKind { sgd, adamw };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables it.
  double max_norm = 0.0;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Outer-loop optimizer over the trainable groups of a ParamSet. Moments are
/// allocated on the first step.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, double rate) : config_(config), rate_(rate) {}

  void step(ParamSet& params, const GradRecord& grads, const FreezeMask& mask);

  const OptimizerConfig& config() const noexcept { return config_; }
  double rate() const noexcept { return rate_; }
  std::uint64_t steps() const noexcept { return steps_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }
  void restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

  bool operator==(const Optimizer&) const = default;

 private:
  OptimizerConfig config_;
  double rate_ = 1e-3;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

struct MetaConfig {
  double alpha_ctml = 0.1;
  double beta_ctml = 3e-3;
  double alpha_clml = 0.1;
  double beta_clml = 1e-3;
  std::size_t inner_steps = 1;
  std::size_t meta_batch_ctml = 3;
  std::size_t meta_batch_clml = 1;
  std::size_t batch_size = 12;
  OptimizerConfig optimizer;
  /// Whether the scoring head adapts alongside the adapters in CTML, and
  /// alongside the last encoder layer in CLML.
  bool ctml_train_head = true;
  bool clml_train_head = true;
  std::size_t max_steps = 2000;
  std::size_t eval_interval = 50;
  /// Evaluations without dev improvement before training stops; 0 disables.
  std::size_t patience = 10;
  /// Adaptation phase (clml, mono, target_only).
  std::size_t adapt_steps = 300;
  std::size_t adapt_eval_interval = 25;
  double finetune_rate = 3e-3;

  void validate() const;
  bool operator==(const MetaConfig&) const = default;
};

/// Plain gradient steps on the support loss; groups outside the
/// mask come back bit-identical.
ModelParams inner_adapt(const ModelParams& model, std::span<const MultiChoiceInstance> support,
                        double alpha, const FreezeMask& mask, std::size_t steps = 1);

struct MetaStepResult {
  std::vector<double> query_losses;  // one per episode, in input order
  GradRecord outer_grad;             // mean first-order gradient actually applied
  double mean_query_loss() const;
};

/// One first-order MAML step restricted to `mask`: adapt on each support set,
/// take the query gradient at the adapted point, average, and apply `opt`.
MetaStepResult fomaml_step(ModelParams& model, std::span<const Episode> episodes,
                           const FreezeMask& mask, double alpha, std::size_t inner_steps,
                           Optimizer& opt);

/// Cross-task step: only adapters (and optionally the head) move.
MetaStepResult ctml_step(ModelParams& model, std::span<const Episode> episodes,
                         const MetaConfig& config, Optimizer& opt);

/// Cross-lingual step: support must come from `source_language`, and only the
/// last encoder layer (and optionally the head) moves.
MetaStepResult clml_step(ModelParams& model, std::span<const Episode> episodes,
                         const MetaConfig& config, Optimizer& opt,
                         std::size_t source_language = 0);

/// Fraction of instances whose predicted candidate is the gold one.
double evaluate(const ModelParams& model, std::span<const MultiChoiceInstance> pool);

/// One row of the metrics log. Unknown values are NaN.
struct MetricsRecord {
  static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

  std::uint64_t step = 0;
  std::string phase;  // train, adapt, eval
  std::string mode;
  std::size_t language = 0;
  std::vector<std::size_t> dataset_ids;
  double l_original = kMissing;
  std::vector<double> l_sources;  // one per source dataset
  double query_loss = kMissing;
  double dev_acc = kMissing;
  std::uint64_t seed = 0;  // stream seed that drove this step
};

/// Append-only, strictly step-ordered log with a fixed CSV schema, preceded
/// by a `# format_version=1` line:
///   step,phase,mode,language,dataset_ids,L_original,L_s1..L_sk,query_loss,dev_acc,seed
/// Reals use the shortest round-trip decimal form, so parsing is exact.
class MetricsLog {
 public:
  explicit MetricsLog(std::size_t num_sources = 0) : num_sources_(num_sources) {}

  void append(MetricsRecord record);
  std::uint64_t next_step() const noexcept { return records_.empty() ? 0 : records_.back().step + 1; }

  std::size_t num_sources() const noexcept { return num_sources_; }
  const std::vector<MetricsRecord>& records() const noexcept { return records_; }

  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
  static MetricsLog parse_csv(std::string_view text);

  bool operator==(const MetricsLog& other) const;

 private:
  std::size_t num_sources_ = 0;
  std::vector<MetricsRecord> records_;
};

/// Exact text form of a double and its inverse.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace metatransfer
