// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "metatransfer/error.hpp"
#include "metatransfer/tasks.hpp"
#include "test_util.hpp"

using namespace metatransfer;
using metatransfer::testing::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Bayes rule computed directly from the generating direction.
std::size_t oracle_label(const DatasetSpec& spec, const MultiChoiceInstance& inst) {
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t c = 0; c < inst.num_candidates(); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < spec.direction.size(); ++i) {
      const double a = inst.candidates(c, i);
      s += spec.direction[i] * (a + spec.interaction * inst.context[i] * a);
    }
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

// x = Q^T (y - c), row by row.
Tensor unshift(const LanguageShift& shift, const Tensor& rows) {
  const std::size_t F = shift.rotation.rows();
  Tensor out(rows.rows(), F);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t j = 0; j < F; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < F; ++i) s += shift.rotation(i, j) * (rows(r, i) - shift.bias[i]);
      out(r, j) = s;
    }
  }
  return out;
}

// Upper 1% points of the chi-square distribution.
double chi2_critical_01(std::size_t dof) {
  static const double table[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086};
  return table[dof];
}

}  // namespace

TEST_CASE("generate_suite: relatedness sets the cosine to the target") {
  const std::vector<double> r{1.0, 0.0, 0.3, 0.75, 0.0};
  const auto specs = generate_suite(r.size(), r, std::nullopt, 17);
  CHECK(std::abs(dot(specs.target.direction, specs.target.direction) - 1.0) < 1e-12);
  for (std::size_t j = 0; j < r.size(); ++j) {
    CAPTURE(j);
    CHECK(specs.sources[j].index == j);
    CHECK(std::abs(dot(specs.sources[j].direction, specs.sources[j].direction) - 1.0) < 1e-12);
    CHECK(std::abs(dot(specs.sources[j].direction, specs.target.direction) - r[j]) < 1e-6);
  }
  for (std::size_t i = 0; i < specs.target.direction.size(); ++i) {
    CHECK(specs.sources[0].direction[i] == doctest::Approx(specs.target.direction[i]).epsilon(1e-12));
  }
  // The two unrelated datasets are unrelated to each other as well.
  CHECK(std::abs(dot(specs.sources[1].direction, specs.sources[4].direction)) < 1e-9);
}

TEST_CASE("generate_suite: explicit target direction is used, normalized") {
  Rng rng(3);
  Tensor u = random_tensor(rng, 1, 16);
  const std::vector<double> r{0.5, 0.5};
  const auto specs = generate_suite(2, r, u, 1);
  const double n = std::sqrt(dot(u, u));
  for (std::size_t i = 0; i < 16; ++i) CHECK(specs.target.direction[i] == doctest::Approx(u[i] / n));
  CHECK(std::abs(dot(specs.sources[0].direction, specs.sources[1].direction) - 0.25) < 1e-9);
}

TEST_CASE("generate_suite: deterministic in the seed") {
  const std::vector<double> r{0.2, 0.9, 0.0};
  const auto a = generate_suite(3, r, std::nullopt, 99);
  const auto b = generate_suite(3, r, std::nullopt, 99);
  const auto c = generate_suite(3, r, std::nullopt, 100);
  CHECK(a.target == b.target);
  CHECK(a.sources == b.sources);
  CHECK_FALSE(a.sources == c.sources);
}

TEST_CASE("generate_suite: invalid inputs are structured errors") {
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(generate_suite(1, one, std::nullopt, 0), Error);
  const std::vector<double> too_big{1.0, 1.2};
  try {
    generate_suite(2, too_big, std::nullopt, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
  }
  const std::vector<double> negative{0.5, -0.1};
  CHECK_THROWS_AS(generate_suite(2, negative, std::nullopt, 0), Error);
  const std::vector<double> short_list{0.5};
  CHECK_THROWS_AS(generate_suite(2, short_list, std::nullopt, 0), Error);
}

TEST_CASE("make_language: magnitude 0 is the identity shift") {
  const auto shift = make_language(4, 0.0, 123);
  CHECK(shift.rotation == Tensor::identity(16));
  CHECK(shift.bias == Tensor(1, 16));
  Rng rng(1);
  const Tensor x = random_tensor(rng, 3, 16);
  CHECK(shift.apply(x) == x);
  CHECK(LanguageShift::identity(0, 16).apply(x) == x);
}

TEST_CASE("make_language: rotations are orthogonal and preserve distances") {
  for (double m : {0.1, 0.5, 0.8, 1.0, 2.0}) {
    CAPTURE(m);
    const auto shift = make_language(2, m, 7);
    const Tensor& Q = shift.rotation;
    double worst = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t j = 0; j < 16; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < 16; ++r) s += Q(r, i) * Q(r, j);
        worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
      }
    }
    CHECK(worst < 1e-8);

    Rng rng(5);
    const Tensor x = random_tensor(rng, 2, 16);
    const Tensor y = shift.apply(x);
    double dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      dx += (x(0, i) - x(1, i)) * (x(0, i) - x(1, i));
      dy += (y(0, i) - y(1, i)) * (y(0, i) - y(1, i));
    }
    CHECK(dy == doctest::Approx(dx).epsilon(1e-10));
  }
}

TEST_CASE("make_language: larger magnitude moves further from the identity") {
  double previous = 0.0;
  for (double m : {0.2, 0.4, 0.6, 0.8}) {
    const auto shift = make_language(1, m, 11);
    double dist = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t j = 0; j < 16; ++j) {
        const double d = shift.rotation(i, j) - (i == j ? 1.0 : 0.0);
        dist += d * d;
      }
    }
    CHECK(dist > previous);
    previous = dist;
  }
}

TEST_CASE("make_language: reproducible, and negative magnitude is rejected") {
  CHECK(make_language(3, 1.0, 42) == make_language(3, 1.0, 42));
  CHECK_FALSE(make_language(3, 1.0, 42) == make_language(4, 1.0, 42));
  CHECK_THROWS_AS(make_language(3, -0.1, 42), Error);
}

TEST_CASE("sample_episode: sizes, ranges and identity shift") {
  const std::vector<double> r{1.0, 0.0};
  auto specs = generate_suite(2, r, std::nullopt, 5);
  specs.sources[0].candidates = 5;
  Rng a(8), b(8);
  const auto ep = sample_episode(specs.sources[0], LanguageShift::identity(0, 16), 12, 7, a);
  CHECK(ep.dataset == 0);
  CHECK(ep.support.size() == 12);
  CHECK(ep.query.size() == 7);
  for (const auto& inst : ep.support) {
    CHECK(inst.num_candidates() == 5);
    CHECK(inst.label < 5);
  }
  // The identity shift leaves the raw draws untouched.
  const auto raw = sample_instance(specs.sources[0], b);
  CHECK(raw == ep.support.front());
  CHECK_THROWS_AS(sample_episode(specs.sources[0], LanguageShift::identity(0, 16), 0, 1, a), Error);
}

TEST_CASE("sample_episode: same seed gives bit-identical episodes") {
  const std::vector<double> r{0.4, 0.0};
  const auto specs = generate_suite(2, r, std::nullopt, 5);
  const auto lang = make_language(1, 0.5, 5);
  Rng a(77), b(77);
  const auto e1 = sample_episode(specs.sources[1], lang, 4, 4, a);
  const auto e2 = sample_episode(specs.sources[1], lang, 4, 4, b);
  REQUIRE(e1.support.size() == e2.support.size());
  for (std::size_t i = 0; i < e1.support.size(); ++i) {
    CHECK(metatransfer::testing::bit_identical(e1.support[i].candidates, e2.support[i].candidates));
    CHECK(e1.support[i] == e2.support[i]);
  }
  std::set<std::uint64_t> ids;
  for (const auto& inst : e1.support) ids.insert(inst.id);
  for (const auto& inst : e1.query) CHECK(ids.count(inst.id) == 0);
}

TEST_CASE("Bayes oracle over 1k noiseless samples is 100% accurate") {
  for (double kappa : {0.0, 0.5}) {
    CAPTURE(kappa);
    const std::vector<double> r{1.0, 0.0};
    auto specs = generate_suite(2, r, std::nullopt, 21);
    auto spec = specs.sources[0];
    spec.candidates = 4;
    spec.interaction = kappa;
    Rng rng(2);
    std::size_t correct = 0;
    for (int i = 0; i < 1000; ++i) {
      auto inst = sample_instance(spec, rng);
      // Relatedness 1 means the target direction itself is the oracle.
      auto oracle = spec;
      oracle.direction = specs.target.direction;
      correct += oracle_label(oracle, inst) == inst.label;
    }
    CHECK(correct == 1000);
  }
}

TEST_CASE("labels are uniform across candidate slots (chi-square, 10k draws)") {
  const std::vector<double> r{0.6, 0.0};
  const auto specs = generate_suite(2, r, std::nullopt, 4);
  for (std::size_t N : {2, 4, 5}) {
    for (double noise : {0.0, 1.0}) {
      CAPTURE(N);
      CAPTURE(noise);
      auto spec = specs.sources[0];
      spec.candidates = N;
      spec.noise = noise;
      Rng rng(1000 + N);
      std::vector<double> counts(N, 0.0);
      const int draws = 10000;
      for (int i = 0; i < draws; ++i) counts[sample_instance(spec, rng).label] += 1.0;
      const double expected = double(draws) / double(N);
      double chi2 = 0.0;
      for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
      CHECK(chi2 < chi2_critical_01(N - 1));
    }
  }
}

TEST_CASE("language shifts never change labels") {
  const std::vector<double> r{0.8, 0.0};
  const auto specs = generate_suite(2, r, std::nullopt, 6);
  auto spec = specs.sources[0];
  spec.candidates = 4;
  spec.interaction = 0.3;
  const auto lang = make_language(5, 0.8, 6);
  Rng rng(31);
  const auto ep = sample_episode(spec, lang, 200, 1, rng);
  for (const auto& shifted : ep.support) {
    MultiChoiceInstance original = shifted;
    original.context = unshift(lang, shifted.context);
    original.candidates = unshift(lang, shifted.candidates);
    CHECK(oracle_label(spec, original) == shifted.label);
  }
}

TEST_CASE("pool episodes: support and query are disjoint") {
  Suite suite = build_suite(SuiteConfig{});
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ep = sample_pool_episode(suite.dev[3], 6, 3, 12, 12, rng);
    std::set<std::uint64_t> ids;
    for (const auto& inst : ep.support) ids.insert(inst.id);
    CHECK(ids.size() == 12);
    for (const auto& inst : ep.query) CHECK(ids.count(inst.id) == 0);

    const auto cross = sample_pool_episode(suite.dev[0], 0, suite.dev[5], 5, 6, 12, 12, rng);
    CHECK(cross.support_language == 0);
    CHECK(cross.language == 5);
    std::set<std::uint64_t> support_ids;
    for (const auto& inst : cross.support) support_ids.insert(inst.id);
    for (const auto& inst : cross.query) CHECK(support_ids.count(inst.id) == 0);
  }
  CHECK_THROWS_AS(sample_pool_episode(suite.probe, 6, 0, 150, 51, rng), Error);
  CHECK_THROWS_AS(sample_from_pool(suite.probe, 201, rng), Error);
  CHECK(sample_from_pool(suite.probe, 200, rng).size() == 200);
}

TEST_CASE("build_suite: pools are aligned across languages and mutually disjoint") {
  SuiteConfig config;
  config.seed = 12;
  const Suite suite = build_suite(config);
  REQUIRE(suite.num_languages() == 10);
  CHECK(suite.num_sources() == 6);
  CHECK(suite.source_language().rotation == Tensor::identity(16));
  CHECK(suite.target.candidates == 2);
  CHECK(suite.dev[0].size() == 400);
  CHECK(suite.test[0].size() == 500);
  CHECK(suite.probe.size() == 200);
  for (std::size_t l = 0; l < suite.num_languages(); ++l) {
    for (std::size_t i = 0; i < suite.dev[l].size(); ++i) {
      CHECK(suite.dev[l][i].id == suite.dev[0][i].id);
      CHECK(suite.dev[l][i].label == suite.dev[0][i].label);
    }
  }
  // Language 1 is a target language with magnitude 0, identical to the source.
  CHECK(suite.dev[1] == suite.dev[0]);
  CHECK_FALSE(suite.dev[9] == suite.dev[0]);

  std::set<std::uint64_t> ids;
  for (const auto& inst : suite.dev[0]) ids.insert(inst.id);
  for (const auto& inst : suite.test[0]) ids.insert(inst.id);
  for (const auto& inst : suite.probe) ids.insert(inst.id);
  CHECK(ids.size() == 1100);

  for (const auto& inst : suite.test[0]) CHECK(oracle_label(suite.target, inst) == inst.label);
  CHECK(build_suite(config) == suite);
}

TEST_CASE("build_suite: inconsistent configs are rejected") {
  SuiteConfig config;
  config.noise.pop_back();
  CHECK_THROWS_AS(build_suite(config), Error);
  config = SuiteConfig{};
  config.language_magnitudes = {0.3};
  CHECK_THROWS_AS(build_suite(config), Error);
}
