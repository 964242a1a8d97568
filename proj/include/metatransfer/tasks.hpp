// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metatransfer/model.hpp"
#include "metatransfer/rng.hpp"
#include "metatransfer/tensor.hpp"

namespace metatransfer {

/// Ground truth for one synthetic multiple-choice dataset. The gold answer
/// is argmax_i u . phi(x, a_i) + noise * xi_i with phi(x, a) = a + interaction * (x o a).
struct DatasetSpec {
  std::size_t index = 0;
  Tensor direction;  // 1 x F, unit norm
  double relatedness = 1.0;
  double noise = 0.0;
  std::size_t nominal_size = 1000;
  std::size_t candidates = 2;
  double interaction = 0.0;

  bool operator==(const DatasetSpec&) const = default;
};

/// Feature-space model of a language: x -> Q x + c with Q orthogonal.
struct LanguageShift {
  std::size_t id = 0;
  double magnitude = 0.0;
  Tensor rotation;  // F x F
  Tensor bias;      // 1 x F

  static LanguageShift identity(std::size_t id, std::size_t feature_dim);

  /// Applies the shift to every row.
  Tensor apply(const Tensor& rows) const;
  MultiChoiceInstance apply(const MultiChoiceInstance& instance) const;

  bool operator==(const LanguageShift&) const = default;
};

struct Episode {
  std::size_t dataset = 0;
  std::size_t language = 0;  // of the query half
  std::size_t support_language = 0;
  std::vector<MultiChoiceInstance> support;
  std::vector<MultiChoiceInstance> query;
};

struct SuiteSpecs {
  DatasetSpec target;
  std::vector<DatasetSpec> sources;
};

/// Source directions sit at the requested cosine to the target direction;
/// their off-target components are mutually orthogonal when k < F.
/// `target_direction` is drawn from the seed when not given.
SuiteSpecs generate_suite(std::size_t k, std::span<const double> relatedness,
                          std::optional<Tensor> target_direction, std::uint64_t seed,
                          std::size_t feature_dim = 16);

/// Random rotation exp(magnitude * A) for a seeded skew-symmetric A, plus a
/// bias scaled by magnitude. Magnitude 0 is exactly the identity.
LanguageShift make_language(std::size_t id, double magnitude, std::uint64_t seed,
                            std::size_t feature_dim = 16, double rotation_scale = 1.0,
                            double bias_scale = 0.5);

/// Fresh i.i.d. instance in source-language coordinates.
MultiChoiceInstance sample_instance(const DatasetSpec& spec, Rng& rng);

Episode sample_episode(const DatasetSpec& spec, const LanguageShift& language,
                       std::size_t n_support, std::size_t n_query, Rng& rng);

/// Support and query drawn without replacement from a finite pool; the two
/// halves never share an instance.
Episode sample_pool_episode(std::span<const MultiChoiceInstance> pool, std::size_t dataset,
                            std::size_t language, std::size_t n_support, std::size_t n_query,
                            Rng& rng);

/// Same, with support taken from `support_pool` and query from `query_pool`.
/// The pools must be index-aligned versions of the same instances, e.g. one
/// pool in two languages; no underlying instance lands in both halves.
Episode sample_pool_episode(std::span<const MultiChoiceInstance> support_pool,
                            std::size_t support_language,
                            std::span<const MultiChoiceInstance> query_pool,
                            std::size_t query_language, std::size_t dataset,
                            std::size_t n_support, std::size_t n_query, Rng& rng);

/// `n` distinct instances of `pool`, in draw order.
std::vector<MultiChoiceInstance> sample_from_pool(std::span<const MultiChoiceInstance> pool,
                                                  std::size_t n, Rng& rng);

/// Everything needed to generate a reproducible task suite.
struct SuiteConfig {
  std::size_t feature_dim = 16;
  std::vector<double> relatedness{1.0, 0.8, 0.5, 0.0, 0.0, 0.0};
  std::vector<double> noise{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<std::size_t> candidates{4, 2, 4, 5, 4, 4};
  std::vector<std::size_t> sizes{38000, 20000, 25000, 12247, 113000, 70000};
  double interaction = 0.0;
  std::size_t target_candidates = 2;
  // Entry 0 is the source language; the rest are the target languages.
  std::vector<double> language_magnitudes{0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  double rotation_scale = 1.0;
  double bias_scale = 0.5;
  std::size_t dev_size = 400;
  std::size_t test_size = 500;
  std::size_t probe_size = 200;
  std::uint64_t seed = 0;

  std::size_t num_sources() const noexcept { return relatedness.size(); }
  void validate() const;
  bool operator==(const SuiteConfig&) const = default;
};

/// A generated suite: source specs, the target task, one shift per language
/// (index 0 is the source language) and the target pools. Dev and test pools
/// hold the same underlying instances in every language.
struct Suite {
  SuiteConfig config;
  DatasetSpec target;
  std::vector<DatasetSpec> sources;
  std::vector<LanguageShift> languages;
  std::vector<std::vector<MultiChoiceInstance>> dev;   // per language
  std::vector<std::vector<MultiChoiceInstance>> test;  // per language
  std::vector<MultiChoiceInstance> probe;              // source language

  std::size_t num_sources() const noexcept { return sources.size(); }
  std::size_t num_languages() const noexcept { return languages.size(); }
  const LanguageShift& source_language() const { return languages.front(); }

  bool operator==(const Suite&) const = default;
};

Suite build_suite(const SuiteConfig& config);

}  // namespace metatransfer
