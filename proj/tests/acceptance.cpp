// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Every threshold used below is pinned in the constants block.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "metatransfer/grad_check.hpp"
#include "metatransfer/harness.hpp"
#include "metatransfer/meta.hpp"
#include "metatransfer/sampler.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace metatransfer;
using metatransfer::testing::bit_identical;
using metatransfer::testing::oracle_loss_grad;
using metatransfer::testing::oracle_step;
using metatransfer::testing::random_batch;
using metatransfer::testing::random_model;
using metatransfer::testing::random_tensor;

namespace {

// Thresholds.
constexpr std::uint64_t kGradSeeds = 100;
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradBudget = 60.0;
constexpr double kOracleTol = 1e-9;
constexpr double kOracleBudget = 10.0;
constexpr int kFreezeSteps = 50;
constexpr double kSumTol = 1e-9;
constexpr int kDraws = 50000;
constexpr double kTvTol = 0.02;
constexpr double kUniformTol = 1e-12;
constexpr int kBanditUpdates = 200;
constexpr double kBanditTarget = 0.9;
constexpr std::uint64_t kSeeds = 10;
constexpr double kHelpfulMargin = 0.15;
constexpr std::size_t kHelpfulRequired = 8;
constexpr double kSamplerBudget = 300.0;
constexpr double kSignAlpha = 0.1;
constexpr double kLearnTarget = 0.9;
constexpr std::uint64_t kLearnSeeds = 5;
constexpr double kTotalBudget = 1800.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// One-sided sign test of a >= b on paired values, ties dropped.
struct SignTest {
  int wins = 0, losses = 0, ties = 0;
  double p = 1.0;
};

SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  SignTest s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++s.wins;
    else if (a[i] < b[i]) ++s.losses;
    else ++s.ties;
  }
  const int n = s.wins + s.losses;
  if (n == 0) return s;
  double p = 0.0;
  for (int i = s.wins; i <= n; ++i) {
    double c = 1.0;
    for (int j = 0; j < i; ++j) c = c * (n - j) / (j + 1);
    p += c;
  }
  s.p = p / std::pow(2.0, n);
  return s;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string describe(const char* name, const SignTest& s, double ma, double mb) {
  return fmt("%s %.3f vs %.3f, %d-%d-%d, p=%.4f", name, ma, mb, s.wins, s.losses, s.ties, s.p);
}

ModelShape toy_shape() {
  ModelShape s;
  s.feature_dim = 3;
  s.hidden = 4;
  s.adapter_dim = 2;
  s.layers = 2;
  return s;
}

Episode random_episode(Rng& rng, std::size_t dataset, std::size_t N, std::size_t language = 0) {
  Episode ep;
  ep.dataset = dataset;
  ep.language = language;
  ep.support_language = 0;
  ep.support = random_batch(rng, 3, 5, N);
  ep.query = random_batch(rng, 3, 4, N);
  return ep;
}

std::vector<double> random_probs(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  for (auto& v : p) v = 0.05 + rng.uniform();
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= total;
  return p;
}

std::vector<std::vector<std::size_t>> ordered_pairs(std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      if (a != b) out.push_back({a, b});
    }
  }
  return out;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const GradCheckOptions options{kGradStep, kGradTol};
  std::map<std::string, double> worst;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
    Rng rng(5000 + seed);
    const ModelParams m = random_model(rng, toy_shape());
    const auto batch = std::vector<MultiChoiceInstance>{
        testing::random_instance(rng, 3, 2), testing::random_instance(rng, 3, 4),
        testing::random_instance(rng, 3, 3)};
    const std::pair<const char*, GroupRole> parts[] = {
        {"encoder", GroupRole::backbone}, {"adapter", GroupRole::adapter}, {"head", GroupRole::head}};
    for (const auto& [name, role] : parts) {
      const FreezeMask mask = FreezeMask::only(m.params(), {role});
      const auto r = batch_loss(batch, m, mask);
      const auto report = grad_check(
          [&](const ParamSet& p) { return batch_loss_value(batch, ModelParams(m.shape(), p)); },
          m.params(), r.grads, mask, options);
      ok = ok && report.passed;
      worst[name] = std::max(worst[name], report.max_rel_error);
    }

    const std::size_t k = 3, H = 5;
    Policy policy = Policy::init(k, H, rng);
    for (std::size_t i = 0; i < policy.params().size(); ++i) {
      for (auto& v : policy.params().value(i).values()) v = 0.7 * rng.normal();
    }
    const PolicyState state{random_tensor(rng, 1, H, 0.5), random_tensor(rng, 1, H, 0.5)};
    const std::vector<double> d{rng.normal(), rng.normal(), rng.normal()};
    const auto p = random_probs(rng, k);
    const std::vector<double> w{rng.normal(), rng.normal(), rng.normal()};
    const auto report = grad_check(
        [&](const ParamSet& ps) {
          const auto out = policy_forward(Policy(k, H, ps), state, d, p);
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += w[j] * out.probs[j];
          return s;
        },
        policy.params(), policy_backward(policy, state, d, p, w),
        FreezeMask(policy.params().size(), true), options);
    ok = ok && report.passed;
    worst["policy"] = std::max(worst["policy"], report.max_rel_error);
  }
  const double t = seconds_since(t0);
  std::string detail;
  for (const auto& [name, e] : worst) detail += fmt("%s %.1e, ", name.c_str(), e);
  detail += fmt("tol %.0e, %.1fs (limit %.0fs)", kGradTol, t, kGradBudget);
  return {ok && t < kGradBudget, detail};
}

double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto x = a.params().value(i).values();
    const auto y = b.params().value(i).values();
    for (std::size_t j = 0; j < x.size(); ++j) worst = std::max(worst, std::abs(x[j] - y[j]));
  }
  return worst;
}

ModelParams two_pass_oracle(const ModelParams& model, const std::vector<Episode>& episodes,
                            const FreezeMask& mask, double alpha, double beta) {
  std::vector<Tensor> mean;
  for (const auto& g : model.params().groups()) mean.emplace_back(g.value.rows(), g.value.cols());
  for (const auto& ep : episodes) {
    const ModelParams adapted =
        oracle_step(model, oracle_loss_grad(ep.support, model).grads, mask, alpha);
    const auto query = oracle_loss_grad(ep.query, adapted);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      for (std::size_t j = 0; j < mean[i].size(); ++j) {
        mean[i][j] += query.grads[i][j] / static_cast<double>(episodes.size());
      }
    }
  }
  return oracle_step(model, mean, mask, beta);
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  MetaConfig config;
  config.optimizer.kind = OptimizerKind::sgd;
  config.alpha_ctml = 0.3;
  config.beta_ctml = 0.2;
  config.alpha_clml = 0.25;
  config.beta_clml = 0.15;
  double ctml_err = 0.0, clml_err = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(700 + seed);
    ModelParams m = random_model(rng, toy_shape());
    const std::vector<Episode> eps{random_episode(rng, 0, 2), random_episode(rng, 1, 3)};
    const ModelParams expected = two_pass_oracle(m, eps, adapter_mask(m, true), config.alpha_ctml,
                                                 config.beta_ctml);
    Optimizer opt(config.optimizer, config.beta_ctml);
    ctml_step(m, eps, config, opt);
    ctml_err = std::max(ctml_err, max_abs_diff(m, expected));

    ModelParams c = random_model(rng, toy_shape());
    const std::vector<Episode> target{random_episode(rng, 0, 2, 3)};
    const ModelParams want = two_pass_oracle(c, target, last_layer_mask(c, true),
                                             config.alpha_clml, config.beta_clml);
    Optimizer copt(config.optimizer, config.beta_clml);
    clml_step(c, target, config, copt);
    clml_err = std::max(clml_err, max_abs_diff(c, want));
  }
  const double t = seconds_since(t0);
  return {ctml_err < kOracleTol && clml_err < kOracleTol && t < kOracleBudget,
          fmt("ctml max diff %.1e, clml max diff %.1e, tol %.0e, %.2fs", ctml_err, clml_err,
              kOracleTol, t)};
}

Outcome freeze_contracts() {
  Rng rng(12);
  const ModelParams start = random_model(rng, toy_shape());
  const MetaConfig config;
  ModelParams ctml = start, clml = start;
  Optimizer ctml_opt(config.optimizer, config.beta_ctml);
  Optimizer clml_opt(config.optimizer, config.beta_clml);
  for (int s = 0; s < kFreezeSteps; ++s) {
    const std::vector<Episode> eps{random_episode(rng, 0, 2), random_episode(rng, 1, 4, 2)};
    ctml_step(ctml, std::span<const Episode>(eps.data(), 1), config, ctml_opt);
    clml_step(clml, std::span<const Episode>(eps.data() + 1, 1), config, clml_opt);
  }
  const auto last = start.layer(start.shape().layers - 1);
  int violations = 0, moved = 0;
  for (std::size_t i = 0; i < start.params().size(); ++i) {
    const auto role = start.params().group(i).role;
    const bool last_layer = i == last.W || i == last.b;
    if (role == GroupRole::backbone && !bit_identical(ctml.params(), start.params(), i)) ++violations;
    if (role == GroupRole::adapter && !bit_identical(clml.params(), start.params(), i)) ++violations;
    if (role == GroupRole::backbone && !last_layer &&
        !bit_identical(clml.params(), start.params(), i)) {
      ++violations;
    }
    if (role == GroupRole::adapter && !bit_identical(ctml.params(), start.params(), i)) ++moved;
    if (last_layer && !bit_identical(clml.params(), start.params(), i)) ++moved;
  }
  return {violations == 0 && moved > 0,
          fmt("%d frozen groups changed, %d trainable groups moved, %d steps", violations, moved,
              kFreezeSteps)};
}

Outcome trajectory_probability() {
  double worst_sum = 0.0, worst_tv = 0.0, worst_uniform = 0.0;
  Rng rng(77);
  const auto pairs = ordered_pairs(4);
  for (double eps : {0.0, 0.3, 1.0}) {
    const auto p = random_probs(rng, 4);
    double total = 0.0;
    for (const auto& t : pairs) total += std::exp(trajectory_logprob(p, t, eps, TrajectoryNorm::renorm));
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));

    std::map<std::vector<std::size_t>, double> counts;
    for (int i = 0; i < kDraws; ++i) counts[sample_trajectory(p, 2, eps, rng).actions] += 1.0;
    double tv = 0.0;
    for (const auto& t : pairs) {
      tv += std::abs(counts[t] / kDraws - std::exp(trajectory_logprob(p, t, eps, TrajectoryNorm::renorm)));
    }
    worst_tv = std::max(worst_tv, 0.5 * tv);

    if (eps == 1.0) {
      for (TrajectoryNorm v : {TrajectoryNorm::renorm, TrajectoryNorm::literal}) {
        for (const auto& t : pairs) {
          const double lp = trajectory_logprob(p, t, eps, v);
          worst_uniform = std::max(worst_uniform, std::abs(lp - std::log(1.0 / 12.0)));
        }
      }
    }
  }
  return {worst_sum < kSumTol && worst_tv < kTvTol && worst_uniform < kUniformTol,
          fmt("sum err %.1e (tol %.0e), max TV %.4f (tol %.2f) at %d draws, eps=1 uniform err %.1e",
              worst_sum, kSumTol, worst_tv, kTvTol, kDraws, worst_uniform)};
}

Outcome bandit() {
  const std::vector<double> rewards{1.0, 0.2};
  int reached_all = 0;
  int worst_update = 0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    SamplerConfig config;
    SamplerState state = SamplerState::init(config, 2, rng);
    int reached = -1;
    for (int u = 0; u < kBanditUpdates && reached < 0; ++u) {
      const auto P =
          policy_forward(state.policy, state.lstm, state.last_rewards, state.last_probs).probs;
      if (P[0] > kBanditTarget) {
        reached = u;
        break;
      }
      std::vector<Trajectory> batch;
      for (std::size_t n = 0; n < config.trajectories; ++n) {
        Trajectory t = sample_trajectory(P.values(), 1, 0.0, rng);
        t.reward = rewards[t.actions[0]];
        batch.push_back(t);
      }
      reinforce_update(state, state.lstm, state.last_rewards, state.last_probs, batch, 0.0,
                       TrajectoryNorm::renorm, 0.0);
    }
    if (reached >= 0) {
      ++reached_all;
      worst_update = std::max(worst_update, reached);
    }
  }
  return {reached_all == static_cast<int>(kSeeds),
          fmt("%d/%llu seeds exceed %.1f, slowest after %d of %d updates", reached_all,
              static_cast<unsigned long long>(kSeeds), kBanditTarget, worst_update, kBanditUpdates)};
}

std::vector<std::uint64_t> seed_list(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

RunConfig small_pool_config(std::vector<double> relatedness, std::vector<std::size_t> candidates) {
  RunConfig c;
  c.suite.noise.assign(relatedness.size(), 0.0);
  c.suite.sizes.assign(relatedness.size(), 1000);
  c.suite.relatedness = std::move(relatedness);
  c.suite.candidates = std::move(candidates);
  c.train_seed = 1000;
  return c;
}

Outcome sampler_learning() {
  const auto t0 = Clock::now();
  RunConfig config = small_pool_config({1.0, 0.0, 0.0}, {2, 2, 2});
  config.sampler.strategy = Strategy::rl;
  config.meta.meta_batch_ctml = 1;
  config.meta.max_steps = 500;
  config.meta.patience = 0;
  std::size_t hits = 0;
  std::string probs;
  for (std::uint64_t r = 0; r < kSeeds; ++r) {
    const RunConfig c = seeded(config, r);
    const StrategyRun run = run_strategy(c, build_suite(c.suite), Strategy::rl, r);
    hits += run.tail_probs[0] > 1.0 / 3.0 + kHelpfulMargin;
    probs += fmt("%.2f ", run.tail_probs[0]);
  }
  const double t = seconds_since(t0);
  return {hits >= kHelpfulRequired && t < kSamplerBudget,
          fmt("tail P(helpful) %s; %zu/%llu above %.3f (need %zu), %.0fs (limit %.0fs)",
              probs.c_str(), hits, static_cast<unsigned long long>(kSeeds),
              1.0 / 3.0 + kHelpfulMargin, kHelpfulRequired, t, kSamplerBudget)};
}

std::vector<double> test_accs(const SamplerComparison& cmp, Strategy s) {
  std::vector<double> out;
  for (const auto& r : cmp.runs) {
    if (r.strategy == s) out.push_back(r.test_acc);
  }
  return out;
}

Outcome orderings() {
  const auto seeds = seed_list(kSeeds);
  bool ok = true;
  std::string detail;
  auto record = [&](const char* name, const std::vector<double>& a, const std::vector<double>& b) {
    const SignTest s = sign_test(a, b);
    ok = ok && s.p < kSignAlpha;
    detail += describe(name, s, mean_of(a), mean_of(b)) + (s.p < kSignAlpha ? "; " : " [fails]; ");
  };

  // Heuristic strategies on the default six-dataset suite.
  {
    RunConfig config = small_pool_config({1.0, 0.8, 0.5, 0.0, 0.0, 0.0}, {4, 2, 4, 5, 4, 4});
    const std::vector<Strategy> list{Strategy::first, Strategy::last, Strategy::sample};
    const auto cmp = compare_samplers(config, list, seeds);
    record("FIRST>=LAST", test_accs(cmp, Strategy::first), test_accs(cmp, Strategy::last));
    record("FIRST>=SAMPLE", test_accs(cmp, Strategy::first), test_accs(cmp, Strategy::sample));
  }
  // One helpful dataset among five distractors.
  {
    RunConfig config = small_pool_config({1.0, 0.0, 0.0, 0.0, 0.0, 0.0}, {2, 4, 4, 5, 4, 4});
    config.meta.meta_batch_ctml = 1;
    const std::vector<Strategy> list{Strategy::rl, Strategy::uniform};
    const auto cmp = compare_samplers(config, list, seeds);
    record("RL>=UNIFORM", test_accs(cmp, Strategy::rl), test_accs(cmp, Strategy::uniform));
  }
  // Three moderately related sources: all together vs the best one alone.
  {
    RunConfig config = small_pool_config({0.6, 0.6, 0.6}, {2, 2, 2});
    config.train_seed = 0;
    const std::vector<std::size_t> sizes{1, 3};
    const auto rows = ablate_adapters(config, sizes, seeds);
    std::vector<double> multi = rows.back().test_acc, best(kSeeds, 0.0);
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      for (std::size_t s = 0; s < kSeeds; ++s) best[s] = std::max(best[s], rows[i].test_acc[s]);
    }
    record("multi>=best single", multi, best);
  }
  // Adaptation to the most shifted language.
  {
    RunConfig config;
    config.suite.interaction = 0.5;
    config.meta.beta_clml = 1e-2;
    config.meta.adapt_steps = 800;
    std::vector<double> clml, target_only;
    for (std::uint64_t r : seeds) {
      const RunConfig c = seeded(config, r);
      const Suite suite = build_suite(c.suite);
      MetricsLog log(suite.num_sources());
      const Checkpoint cp = train_run(c, suite, log);
      const std::size_t lang = suite.num_languages() - 1;
      MetricsLog adapt_log(suite.num_sources());
      for (auto [mode, out] : {std::pair{AdaptMode::clml, &clml},
                               std::pair{AdaptMode::target_only, &target_only}}) {
        const ModelParams m =
            adapt(mode, checkpoint_model(cp), suite, lang, c.meta, c.train_seed, adapt_log);
        out->push_back(evaluate(m, suite.test[lang]));
      }
    }
    record("CLML>=target-only", clml, target_only);
  }
  detail += fmt("alpha %.2f", kSignAlpha);
  return {ok, detail};
}

Outcome zero_shot_learnability() {
  RunConfig config = small_pool_config({1.0, 0.9}, {2, 2});
  config.sampler.strategy = Strategy::uniform;
  std::vector<double> accs;
  std::string list;
  for (std::uint64_t r = 0; r < kLearnSeeds; ++r) {
    const RunConfig c = seeded(config, r);
    const StrategyRun run = run_strategy(c, build_suite(c.suite), Strategy::uniform, r);
    accs.push_back(run.test_acc);
    list += fmt("%.3f ", run.test_acc);
  }
  const double m = mean_of(accs);
  return {m >= kLearnTarget,
          fmt("zero-shot acc %smean %.3f (target %.2f) within %zu steps", list.c_str(), m,
              kLearnTarget, config.meta.max_steps)};
}

Outcome reproducibility() {
  const RunConfig config;
  const RunResult a = run(config);
  const RunResult b = run(config);
  const bool same_log = a.log.to_csv() == b.log.to_csv();
  const bool same_cp = checkpoint_to_json(a.checkpoint) == checkpoint_to_json(b.checkpoint);

  const Suite suite = build_suite(config.suite);
  MetricsLog full_log(suite.num_sources());
  const Checkpoint full = train_run(config, suite, full_log);
  const std::uint64_t half = full.state.step / 2;
  MetricsLog part_log(suite.num_sources());
  const Checkpoint part = train_run(config, suite, part_log, std::nullopt, half);
  const Checkpoint reloaded = checkpoint_from_json(checkpoint_to_json(part));
  MetricsLog resumed_log = MetricsLog::parse_csv(part_log.to_csv());
  const Checkpoint resumed = train_run(config, suite, resumed_log, reloaded);
  const bool same_resume = checkpoint_to_json(resumed) == checkpoint_to_json(full) &&
                           resumed_log.to_csv() == full_log.to_csv() &&
                           checkpoint_to_json(full) == checkpoint_to_json(a.checkpoint);
  return {same_log && same_cp && same_resume,
          fmt("log %s, checkpoint %s (%zu records), resume at step %llu of %llu %s",
              same_log ? "identical" : "differs", same_cp ? "identical" : "differs",
              a.log.records().size(), static_cast<unsigned long long>(half),
              static_cast<unsigned long long>(full.state.step),
              same_resume ? "identical" : "differs")};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", gradient_fidelity},
      {2, "first-order meta step matches two-pass oracle", oracle_equivalence},
      {3, "freeze contracts", freeze_contracts},
      {4, "trajectory probability and sampling", trajectory_probability},
      {5, "policy gradient on a two-arm bandit", bandit},
      {6, "learned sampler prefers the helpful dataset", sampler_learning},
      {7, "qualitative orderings", orderings},
      {8, "zero-shot learnability", zero_shot_learnability},
      {9, "reproducibility and resume", reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  const double total = seconds_since(t0);
  const bool in_budget = total < kTotalBudget;
  failures += !in_budget;
  std::printf("%s 10 total runtime: %.0fs (limit %.0fs)\n", in_budget ? "PASS" : "FAIL", total,
              kTotalBudget);
  return failures == 0 ? 0 : 1;
}
