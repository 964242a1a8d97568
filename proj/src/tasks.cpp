// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "metatransfer/error.hpp"

namespace metatransfer {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTargetDirection = 1;
constexpr std::uint64_t kSourceDirection = 2;
constexpr std::uint64_t kLanguage = 3;
constexpr std::uint64_t kDevPool = 4;
constexpr std::uint64_t kTestPool = 5;
constexpr std::uint64_t kProbePool = 6;

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void normalize(Tensor& v) {
  const double n = std::sqrt(dot(v.values(), v.values()));
  if (n == 0.0) throw Error(ErrorCode::invalid_argument, "cannot normalize a zero vector");
  for (auto& x : v.values()) x /= n;
}

Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

// Removes the components of v along each (unit) vector in `basis`.
void project_out(Tensor& v, const std::vector<Tensor>& basis) {
  for (const auto& b : basis) {
    const double c = dot(v.values(), b.values());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
  }
}

// Random unit vector orthogonal to `fixed` and, while the dimension allows,
// to every vector in `others`.
Tensor orthogonal_unit(Rng& rng, const Tensor& fixed, const std::vector<Tensor>& others) {
  const std::size_t F = fixed.size();
  std::vector<Tensor> basis{fixed};
  if (others.size() + 1 < F) basis.insert(basis.end(), others.begin(), others.end());
  for (;;) {
    Tensor v = gaussian(rng, 1, F);
    // Two passes keep the result orthogonal to round-off.
    project_out(v, basis);
    project_out(v, basis);
    const double n = std::sqrt(dot(v.values(), v.values()));
    if (n > 1e-6) {
      for (auto& x : v.values()) x /= n;
      return v;
    }
  }
}

std::vector<MultiChoiceInstance> draw_pool(const DatasetSpec& spec, std::size_t n,
                                           std::uint64_t seed, std::uint64_t tag) {
  Rng rng(derive_seed(seed, {tag}));
  std::vector<MultiChoiceInstance> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    MultiChoiceInstance inst = sample_instance(spec, rng);
    inst.id = (tag << 48) | i;
    pool.push_back(std::move(inst));
  }
  return pool;
}

std::vector<MultiChoiceInstance> shift_pool(const std::vector<MultiChoiceInstance>& pool,
                                            const LanguageShift& language) {
  std::vector<MultiChoiceInstance> out;
  out.reserve(pool.size());
  for (const auto& inst : pool) out.push_back(language.apply(inst));
  return out;
}

// First n entries of a partial Fisher-Yates shuffle of [0, size).
std::vector<std::size_t> draw_indices(std::size_t size, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(n);
  return idx;
}

}  // namespace

LanguageShift LanguageShift::identity(std::size_t id, std::size_t feature_dim) {
  return {id, 0.0, Tensor::identity(feature_dim), Tensor(1, feature_dim)};
}

Tensor LanguageShift::apply(const Tensor& rows) const {
  const std::size_t F = rotation.rows();
  require_shape(rows, {rows.rows(), F}, "language shift input");
  Tensor out(rows.rows(), F);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto x = rows.row(r);
    for (std::size_t i = 0; i < F; ++i) out(r, i) = dot(rotation.row(i), x) + bias[i];
  }
  return out;
}

MultiChoiceInstance LanguageShift::apply(const MultiChoiceInstance& instance) const {
  MultiChoiceInstance out = instance;
  out.context = apply(instance.context);
  out.candidates = apply(instance.candidates);
  return out;
}

SuiteSpecs generate_suite(std::size_t k, std::span<const double> relatedness,
                          std::optional<Tensor> target_direction, std::uint64_t seed,
                          std::size_t feature_dim) {
  if (k < 2) throw Error(ErrorCode::invalid_argument, "suite needs k >= 2, got " + std::to_string(k));
  if (relatedness.size() != k) {
    throw Error(ErrorCode::invalid_argument, "expected " + std::to_string(k) +
                                                 " relatedness values, got " +
                                                 std::to_string(relatedness.size()));
  }
  for (double r : relatedness) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "relatedness must lie in [0, 1], got " + std::to_string(r));
    }
  }
  if (feature_dim < 2) throw Error(ErrorCode::invalid_argument, "feature_dim must be >= 2");

  SuiteSpecs out;
  if (target_direction) {
    require_shape(*target_direction, {1, feature_dim}, "target direction");
    out.target.direction = *target_direction;
  } else {
    Rng rng(derive_seed(seed, {kTargetDirection}));
    out.target.direction = gaussian(rng, 1, feature_dim);
  }
  normalize(out.target.direction);

  Rng rng(derive_seed(seed, {kSourceDirection}));
  std::vector<Tensor> offsets;
  for (std::size_t j = 0; j < k; ++j) {
    offsets.push_back(orthogonal_unit(rng, out.target.direction, offsets));
    const double r = relatedness[j];
    const double s = std::sqrt(std::max(0.0, 1.0 - r * r));
    DatasetSpec spec;
    spec.index = j;
    spec.relatedness = r;
    spec.direction = Tensor(1, feature_dim);
    for (std::size_t i = 0; i < feature_dim; ++i) {
      spec.direction[i] = r * out.target.direction[i] + s * offsets.back()[i];
    }
    out.sources.push_back(std::move(spec));
  }
  return out;
}

LanguageShift make_language(std::size_t id, double magnitude, std::uint64_t seed,
                            std::size_t feature_dim, double rotation_scale, double bias_scale) {
  if (!(magnitude >= 0.0)) {
    throw Error(ErrorCode::invalid_argument,
                "language magnitude must be >= 0, got " + std::to_string(magnitude));
  }
  LanguageShift shift = LanguageShift::identity(id, feature_dim);
  shift.magnitude = magnitude;
  if (magnitude == 0.0) return shift;

  // Gaussian skew matrix scaled so its largest rotation angle is about
  // rotation_scale * pi / 2; exp(m A) walks from I toward exp(A).
  Rng rng(derive_seed(seed, {kLanguage, id}));
  const auto F = static_cast<Eigen::Index>(feature_dim);
  const double sd = rotation_scale * std::numbers::pi / (4.0 * std::sqrt(double(feature_dim)));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(F, F);
  for (Eigen::Index i = 0; i < F; ++i) {
    for (Eigen::Index j = i + 1; j < F; ++j) {
      A(i, j) = sd * rng.normal();
      A(j, i) = -A(i, j);
    }
  }
  const Eigen::MatrixXd Q = (magnitude * A).exp();
  for (Eigen::Index i = 0; i < F; ++i) {
    for (Eigen::Index j = 0; j < F; ++j) shift.rotation(i, j) = Q(i, j);
  }
  for (auto& v : shift.bias.values()) v = magnitude * bias_scale * rng.normal();
  return shift;
}

MultiChoiceInstance sample_instance(const DatasetSpec& spec, Rng& rng) {
  const std::size_t F = spec.direction.size();
  const std::size_t N = spec.candidates;
  if (N < 2) throw Error(ErrorCode::invalid_argument, "a dataset needs >= 2 candidates");
  MultiChoiceInstance inst;
  inst.context = gaussian(rng, 1, F);
  inst.candidates = gaussian(rng, N, F);
  double best = -INFINITY;
  for (std::size_t c = 0; c < N; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < F; ++i) {
      const double a = inst.candidates(c, i);
      s += spec.direction[i] * (a + spec.interaction * inst.context[i] * a);
    }
    if (spec.noise > 0.0) s += spec.noise * rng.normal();
    if (s > best) {
      best = s;
      inst.label = c;
    }
  }
  inst.id = rng.next_u64();
  return inst;
}

Episode sample_episode(const DatasetSpec& spec, const LanguageShift& language,
                       std::size_t n_support, std::size_t n_query, Rng& rng) {
  if (n_support == 0 || n_query == 0) {
    throw Error(ErrorCode::invalid_argument, "episode sizes must be >= 1");
  }
  Episode ep{spec.index, language.id, language.id, {}, {}};
  ep.support.reserve(n_support);
  ep.query.reserve(n_query);
  for (std::size_t i = 0; i < n_support; ++i) {
    ep.support.push_back(language.apply(sample_instance(spec, rng)));
  }
  for (std::size_t i = 0; i < n_query; ++i) {
    ep.query.push_back(language.apply(sample_instance(spec, rng)));
  }
  return ep;
}

Episode sample_pool_episode(std::span<const MultiChoiceInstance> support_pool,
                            std::size_t support_language,
                            std::span<const MultiChoiceInstance> query_pool,
                            std::size_t query_language, std::size_t dataset,
                            std::size_t n_support, std::size_t n_query, Rng& rng) {
  if (support_pool.size() != query_pool.size()) {
    throw Error(ErrorCode::invalid_argument, "paired pools must have equal size");
  }
  if (n_support == 0 || n_query == 0) {
    throw Error(ErrorCode::invalid_argument, "episode sizes must be >= 1");
  }
  if (n_support + n_query > support_pool.size()) {
    throw Error(ErrorCode::invalid_argument,
                "pool of " + std::to_string(support_pool.size()) + " cannot supply " +
                    std::to_string(n_support + n_query) + " distinct instances");
  }
  const auto idx = draw_indices(support_pool.size(), n_support + n_query, rng);
  Episode ep{dataset, query_language, support_language, {}, {}};
  for (std::size_t i = 0; i < n_support; ++i) ep.support.push_back(support_pool[idx[i]]);
  for (std::size_t i = n_support; i < idx.size(); ++i) ep.query.push_back(query_pool[idx[i]]);
  return ep;
}

Episode sample_pool_episode(std::span<const MultiChoiceInstance> pool, std::size_t dataset,
                            std::size_t language, std::size_t n_support, std::size_t n_query,
                            Rng& rng) {
  return sample_pool_episode(pool, language, pool, language, dataset, n_support, n_query, rng);
}

std::vector<MultiChoiceInstance> sample_from_pool(std::span<const MultiChoiceInstance> pool,
                                                  std::size_t n, Rng& rng) {
  if (n > pool.size()) {
    throw Error(ErrorCode::invalid_argument, "pool of " + std::to_string(pool.size()) +
                                                 " cannot supply " + std::to_string(n) +
                                                 " distinct instances");
  }
  std::vector<MultiChoiceInstance> out;
  out.reserve(n);
  for (std::size_t i : draw_indices(pool.size(), n, rng)) out.push_back(pool[i]);
  return out;
}

void SuiteConfig::validate() const {
  const std::size_t k = relatedness.size();
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); };
  if (k < 2) fail("suite.relatedness needs at least 2 entries");
  if (noise.size() != k) fail("suite.noise must have one entry per source dataset");
  if (candidates.size() != k) fail("suite.candidates must have one entry per source dataset");
  if (sizes.size() != k) fail("suite.sizes must have one entry per source dataset");
  for (double s : noise) {
    if (!(s >= 0.0)) fail("suite.noise entries must be >= 0");
  }
  for (std::size_t n : candidates) {
    if (n < 2) fail("suite.candidates entries must be >= 2");
  }
  if (target_candidates < 2) fail("suite.target_candidates must be >= 2");
  if (feature_dim < 2) fail("suite.feature_dim must be >= 2");
  if (language_magnitudes.empty() || language_magnitudes.front() != 0.0) {
    fail("suite.language_magnitudes must start with the source language (0)");
  }
  for (double m : language_magnitudes) {
    if (!(m >= 0.0)) fail("suite.language_magnitudes entries must be >= 0");
  }
  if (dev_size < 2 || test_size < 1 || probe_size < 1) fail("suite pool sizes too small");
}

Suite build_suite(const SuiteConfig& config) {
  config.validate();
  Suite suite;
  suite.config = config;
  auto specs = generate_suite(config.num_sources(), config.relatedness, std::nullopt, config.seed,
                              config.feature_dim);
  suite.target = std::move(specs.target);
  suite.target.index = config.num_sources();
  suite.target.candidates = config.target_candidates;
  suite.target.nominal_size = config.dev_size;
  suite.target.interaction = config.interaction;
  suite.sources = std::move(specs.sources);
  for (std::size_t j = 0; j < suite.sources.size(); ++j) {
    auto& s = suite.sources[j];
    s.noise = config.noise[j];
    s.candidates = config.candidates[j];
    s.nominal_size = config.sizes[j];
    s.interaction = config.interaction;
  }

  for (std::size_t l = 0; l < config.language_magnitudes.size(); ++l) {
    suite.languages.push_back(make_language(l, config.language_magnitudes[l], config.seed,
                                            config.feature_dim, config.rotation_scale,
                                            config.bias_scale));
  }
  const auto dev = draw_pool(suite.target, config.dev_size, config.seed, kDevPool);
  const auto test = draw_pool(suite.target, config.test_size, config.seed, kTestPool);
  for (const auto& language : suite.languages) {
    suite.dev.push_back(shift_pool(dev, language));
    suite.test.push_back(shift_pool(test, language));
  }
  suite.probe = draw_pool(suite.target, config.probe_size, config.seed, kProbePool);
  return suite;
}

}  // namespace metatransfer
