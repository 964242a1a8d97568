// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metatransfer/error.hpp"
#include "metatransfer/ops.hpp"
#include "metatransfer/tape.hpp"

namespace metatransfer {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::uniform: return "UNIFORM";
    case Strategy::fix: return "FIX";
    case Strategy::sample: return "SAMPLE";
    case Strategy::first: return "FIRST";
    case Strategy::last: return "LAST";
    case Strategy::recip: return "RECIP";
    case Strategy::rl: return "RL";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view s) {
  for (Strategy v : {Strategy::uniform, Strategy::fix, Strategy::sample, Strategy::first,
                     Strategy::last, Strategy::recip, Strategy::rl}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::unknown_strategy, "unknown sampling strategy " + std::string(s));
}

bool needs_feedback(Strategy s) { return s != Strategy::uniform && s != Strategy::fix; }

std::string_view to_string(TrajectoryNorm v) { return v == TrajectoryNorm::literal ? "literal" : "renorm"; }

TrajectoryNorm trajectory_norm_from_string(std::string_view s) {
  if (s == "renorm") return TrajectoryNorm::renorm;
  if (s == "literal") return TrajectoryNorm::literal;
  throw Error(ErrorCode::invalid_config, "unknown trajectory normalization " + std::string(s));
}

double SamplerConfig::epsilon_at(std::uint64_t step) const {
  if (epsilon_anneal_steps == 0) return epsilon;
  const double t = std::min(1.0, static_cast<double>(step) / double(epsilon_anneal_steps));
  return epsilon + t * (epsilon_final - epsilon);
}

void SamplerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); };
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("sampler.epsilon must lie in [0, 1]");
  if (!(epsilon_final >= 0.0 && epsilon_final <= 1.0)) {
    fail("sampler.epsilon_final must lie in [0, 1]");
  }
  if (trajectories < 1) fail("sampler.trajectories must be >= 1");
  if (!(gamma > 0.0)) fail("sampler.gamma must be > 0");
  if (hidden < 1) fail("sampler.hidden must be >= 1");
}

void DatasetFeedback::validate() const {
  const std::size_t k = rewards.size();
  if (l_sources.size() != k || previous_probs.size() != k) {
    throw Error(ErrorCode::shape_mismatch, "feedback fields must all have length k");
  }
  double total = 0.0;
  for (double p : previous_probs) {
    if (p < 0.0) throw Error(ErrorCode::invalid_argument, "negative probability in feedback");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "feedback probabilities do not sum to 1");
  }
}

DatasetFeedback compute_feedback(const ModelParams& model, const Suite& suite,
                                 std::span<const MultiChoiceInstance> probe, double alpha,
                                 const FreezeMask& mask, std::size_t batch_size, Rng& rng) {
  if (probe.empty()) throw Error(ErrorCode::empty_batch, "feedback needs a probe batch");
  DatasetFeedback fb;
  fb.l_original = batch_loss_value(probe, model);
  for (const auto& spec : suite.sources) {
    std::vector<MultiChoiceInstance> support;
    support.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      support.push_back(suite.source_language().apply(sample_instance(spec, rng)));
    }
    const ModelParams pseudo = inner_adapt(model, support, alpha, mask);
    const double l = batch_loss_value(probe, pseudo);
    fb.l_sources.push_back(l);
    fb.rewards.push_back(fb.l_original - l);
  }
  const double k = static_cast<double>(suite.num_sources());
  fb.previous_probs.assign(suite.num_sources(), 1.0 / k);
  return fb;
}

HeuristicChoice heuristic_probs(Strategy strategy, std::span<const double> rewards,
                                std::span<const double> source_losses,
                                std::span<const std::size_t> sizes, std::size_t m) {
  const std::size_t k = std::max({rewards.size(), source_losses.size(), sizes.size()});
  if (k == 0) throw Error(ErrorCode::invalid_argument, "no source datasets");
  if (m < 1 || m > k) {
    throw Error(ErrorCode::invalid_argument,
                "cannot choose " + std::to_string(m) + " of " + std::to_string(k) + " datasets");
  }
  auto need = [&](std::size_t n, const char* what) {
    if (n != k) throw Error(ErrorCode::shape_mismatch, std::string(what) + " must have length k");
  };
  HeuristicChoice out;
  out.probs.assign(k, 0.0);
  switch (strategy) {
    case Strategy::uniform:
      out.probs.assign(k, 1.0 / static_cast<double>(k));
      break;
    case Strategy::fix: {
      need(sizes.size(), "dataset sizes");
      const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
      if (total <= 0.0) throw Error(ErrorCode::zero_denominator, "dataset sizes sum to zero");
      for (std::size_t j = 0; j < k; ++j) out.probs[j] = static_cast<double>(sizes[j]) / total;
      break;
    }
    case Strategy::sample: {
      need(rewards.size(), "rewards");
      const Tensor p = ops::softmax(Tensor::vector(std::vector<double>(rewards.begin(), rewards.end())));
      std::copy(p.values().begin(), p.values().end(), out.probs.begin());
      break;
    }
    case Strategy::first:
    case Strategy::last: {
      need(rewards.size(), "rewards");
      std::vector<std::size_t> order(k);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const bool top = strategy == Strategy::first;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return top ? rewards[a] > rewards[b] : rewards[a] < rewards[b];
      });
      out.chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
      for (std::size_t j : out.chosen) out.probs[j] = 1.0 / static_cast<double>(m);
      break;
    }
    case Strategy::recip: {
      need(source_losses.size(), "source losses");
      double total = 0.0;
      for (double l : source_losses) {
        if (!(l > 0.0)) throw Error(ErrorCode::zero_denominator, "RECIP needs positive losses");
        total += 1.0 / l;
      }
      for (std::size_t j = 0; j < k; ++j) out.probs[j] = (1.0 / source_losses[j]) / total;
      break;
    }
    case Strategy::rl:
      throw Error(ErrorCode::unknown_strategy, "RL is not a heuristic strategy");
  }
  return out;
}

HeuristicChoice heuristic_probs(Strategy strategy, const DatasetFeedback& feedback,
                                const Suite& suite, std::size_t m) {
  std::vector<std::size_t> sizes;
  for (const auto& s : suite.sources) sizes.push_back(s.nominal_size);
  return heuristic_probs(strategy, feedback.rewards, feedback.l_sources, sizes, m);
}

// Policy network --------------------------------------------------------------

namespace {

struct PolicyIndex {
  std::size_t W, U, b, ff_W, ff_b, keys;
};

PolicyIndex policy_index(const ParamSet& p) {
  return {p.index("policy.lstm.W"), p.index("policy.lstm.U"), p.index("policy.lstm.b"),
          p.index("policy.ff.W"),   p.index("policy.ff.b"),   p.index("policy.keys")};
}

Tensor input_row(std::span<const double> feedback, std::span<const double> probs, std::size_t k) {
  if (feedback.size() != k || probs.size() != k) {
    throw Error(ErrorCode::shape_mismatch, "policy input must hold k rewards and k probabilities");
  }
  Tensor x(1, 2 * k);
  std::copy(feedback.begin(), feedback.end(), x.values().begin());
  std::copy(probs.begin(), probs.end(), x.values().begin() + static_cast<std::ptrdiff_t>(k));
  return x;
}

struct PolicyGraph {
  std::vector<Var> params;
  Var probs, h, c;
};

PolicyGraph record_policy(Tape& tape, const Policy& policy, const PolicyState& state,
                          std::span<const double> feedback, std::span<const double> probs,
                          bool trainable) {
  const std::size_t k = policy.num_datasets(), H = policy.hidden();
  require_shape(state.h, {1, H}, "policy hidden state");
  require_shape(state.c, {1, H}, "policy cell state");
  const PolicyIndex ix = policy_index(policy.params());
  PolicyGraph g;
  for (const auto& group : policy.params().groups()) {
    g.params.push_back(tape.parameter(group.value, trainable));
  }
  const Var x = tape.constant(input_row(feedback, probs, k));
  const Var h0 = tape.constant(state.h);
  const Var c0 = tape.constant(state.c);
  const Var gates = tape.add(tape.affine(x, g.params[ix.W], g.params[ix.b]),
                             tape.linear(h0, g.params[ix.U]));
  const Var i = tape.sigmoid(tape.slice_cols(gates, 0, H));
  const Var f = tape.sigmoid(tape.slice_cols(gates, H, H));
  const Var cand = tape.tanh(tape.slice_cols(gates, 2 * H, H));
  const Var o = tape.sigmoid(tape.slice_cols(gates, 3 * H, H));
  g.c = tape.add(tape.mul(f, c0), tape.mul(i, cand));
  g.h = tape.mul(o, tape.tanh(g.c));
  const Var z = tape.tanh(tape.affine(g.h, g.params[ix.ff_W], g.params[ix.ff_b]));
  g.probs = tape.softmax(tape.linear(z, g.params[ix.keys]));
  return g;
}

}  // namespace

Policy Policy::init(std::size_t k, std::size_t hidden, Rng& rng) {
  auto gaussian = [&](std::size_t r, std::size_t c, double sd) {
    Tensor t(r, c);
    for (auto& v : t.values()) v = sd * rng.normal();
    return t;
  };
  const double H = static_cast<double>(hidden);
  ParamSet p;
  p.add("policy.lstm.W", GroupRole::policy, gaussian(4 * hidden, 2 * k, 1.0 / std::sqrt(2.0 * k)));
  p.add("policy.lstm.U", GroupRole::policy, gaussian(4 * hidden, hidden, 1.0 / std::sqrt(H)));
  Tensor b(1, 4 * hidden);
  // Forget-gate bias starts at 1.
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  p.add("policy.lstm.b", GroupRole::policy, std::move(b));
  p.add("policy.ff.W", GroupRole::policy, gaussian(hidden, hidden, 1.0 / std::sqrt(H)));
  p.add("policy.ff.b", GroupRole::policy, Tensor(1, hidden));
  // Small keys keep the initial distribution close to uniform.
  p.add("policy.keys", GroupRole::policy, gaussian(k, hidden, 0.1 / std::sqrt(H)));
  return Policy(k, hidden, std::move(p));
}

Policy::Policy(std::size_t k, std::size_t hidden, ParamSet params)
    : k_(k), hidden_(hidden), params_(std::move(params)) {
  const PolicyIndex ix = policy_index(params_);
  require_shape(params_.value(ix.W), {4 * hidden, 2 * k}, "policy.lstm.W");
  require_shape(params_.value(ix.U), {4 * hidden, hidden}, "policy.lstm.U");
  require_shape(params_.value(ix.b), {1, 4 * hidden}, "policy.lstm.b");
  require_shape(params_.value(ix.ff_W), {hidden, hidden}, "policy.ff.W");
  require_shape(params_.value(ix.ff_b), {1, hidden}, "policy.ff.b");
  require_shape(params_.value(ix.keys), {k, hidden}, "policy.keys");
}

PolicyState PolicyState::zeros(std::size_t hidden) { return {Tensor(1, hidden), Tensor(1, hidden)}; }

PolicyOutput policy_forward(const Policy& policy, const PolicyState& state,
                            std::span<const double> feedback, std::span<const double> probs) {
  Tape tape;
  const PolicyGraph g = record_policy(tape, policy, state, feedback, probs, false);
  return {tape.value(g.probs), {tape.value(g.h), tape.value(g.c)}};
}

GradRecord policy_backward(const Policy& policy, const PolicyState& state,
                           std::span<const double> feedback, std::span<const double> probs,
                           std::span<const double> seed) {
  Tape tape;
  const PolicyGraph g = record_policy(tape, policy, state, feedback, probs, true);
  if (seed.size() != policy.num_datasets()) {
    throw Error(ErrorCode::shape_mismatch, "policy seed must have length k");
  }
  tape.backward(g.probs, Tensor::vector(std::vector<double>(seed.begin(), seed.end())));
  GradRecord out;
  for (Var v : g.params) out.grads.push_back(tape.grad(v));
  return out;
}

// Trajectories ----------------------------------------------------------------

namespace {

void check_trajectory(std::span<const double> probs, std::span<const std::size_t> actions,
                      double epsilon) {
  const std::size_t k = probs.size();
  if (actions.empty() || actions.size() > k) {
    throw Error(ErrorCode::invalid_argument, "trajectory length must lie in [1, k]");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "epsilon must lie in [0, 1]");
  }
  std::vector<bool> seen(k, false);
  for (std::size_t a : actions) {
    if (a >= k || seen[a]) {
      throw Error(ErrorCode::invalid_argument, "trajectory actions must be distinct and < k");
    }
    seen[a] = true;
  }
}

// Denominator of the P term at position g.
double trajectory_denominator(std::span<const double> probs, std::span<const std::size_t> actions,
                              std::size_t g, TrajectoryNorm variant) {
  double d = variant == TrajectoryNorm::renorm ? 1.0 : 0.0;
  if (variant == TrajectoryNorm::literal) {
    for (std::size_t a : actions) d += probs[a];
  }
  for (std::size_t z = 0; z < g; ++z) d -= probs[actions[z]];
  return d;
}

}  // namespace

Trajectory sample_trajectory(std::span<const double> probs, std::size_t g, double epsilon,
                             Rng& rng) {
  const std::size_t k = probs.size();
  if (g > k) {
    throw Error(ErrorCode::invalid_argument,
                "trajectory length " + std::to_string(g) + " exceeds k = " + std::to_string(k));
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "epsilon must lie in [0, 1]");
  }
  std::vector<std::size_t> remaining(k);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  Trajectory t;
  for (std::size_t pos = 0; pos < g; ++pos) {
    double mass = 0.0;
    for (std::size_t j : remaining) mass += probs[j];
    std::size_t pick = 0;
    if (rng.uniform() < epsilon || !(mass > 0.0)) {
      pick = rng.below(remaining.size());
    } else {
      const double u = rng.uniform() * mass;
      double acc = 0.0;
      pick = remaining.size() - 1;
      for (std::size_t r = 0; r < remaining.size(); ++r) {
        acc += probs[remaining[r]];
        if (u < acc) {
          pick = r;
          break;
        }
      }
    }
    t.actions.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  if (g > 0) t.logprob = trajectory_logprob(probs, t.actions, epsilon, TrajectoryNorm::renorm);
  return t;
}

double trajectory_logprob(std::span<const double> probs, std::span<const std::size_t> actions,
                          double epsilon, TrajectoryNorm variant) {
  check_trajectory(probs, actions, epsilon);
  const double k = static_cast<double>(probs.size());
  double lp = 0.0;
  for (std::size_t g = 0; g < actions.size(); ++g) {
    double term = epsilon / (k - static_cast<double>(g));
    if (epsilon < 1.0) {
      const double den = trajectory_denominator(probs, actions, g, variant);
      if (!(den > 0.0)) {
        throw Error(ErrorCode::zero_denominator,
                    "trajectory denominator is " + std::to_string(den) + " at position " +
                        std::to_string(g));
      }
      term += (1.0 - epsilon) * probs[actions[g]] / den;
    }
    lp += std::log(term);
  }
  return lp;
}

std::vector<double> trajectory_logprob_grad(std::span<const double> probs,
                                            std::span<const std::size_t> actions, double epsilon,
                                            TrajectoryNorm variant) {
  check_trajectory(probs, actions, epsilon);
  const std::size_t k = probs.size();
  std::vector<double> grad(k, 0.0);
  if (epsilon >= 1.0) return grad;
  for (std::size_t g = 0; g < actions.size(); ++g) {
    const double den = trajectory_denominator(probs, actions, g, variant);
    if (!(den > 0.0)) {
      throw Error(ErrorCode::zero_denominator, "trajectory denominator is not positive");
    }
    const double p = probs[actions[g]];
    const double term =
        epsilon / static_cast<double>(k - g) + (1.0 - epsilon) * p / den;
    const double scale = (1.0 - epsilon) / term;
    // d(p / den) = dp / den - p / den^2 * d(den)
    grad[actions[g]] += scale / den;
    const double dd = -scale * p / (den * den);
    if (variant == TrajectoryNorm::renorm) {
      for (std::size_t z = 0; z < g; ++z) grad[actions[z]] -= dd;
    } else {
      for (std::size_t z = g; z < actions.size(); ++z) grad[actions[z]] += dd;
    }
  }
  return grad;
}

// Sampler state and updates -----------------------------------------------------

SamplerState SamplerState::init(const SamplerConfig& config, std::size_t k, Rng& rng) {
  SamplerState s;
  s.policy = Policy::init(k, config.hidden, rng);
  OptimizerConfig opt;
  opt.kind = OptimizerKind::adamw;
  s.optimizer = Optimizer(opt, config.gamma);
  s.lstm = PolicyState::zeros(config.hidden);
  s.last_rewards.assign(k, 0.0);
  s.last_probs.assign(k, 1.0 / static_cast<double>(k));
  return s;
}

bool reinforce_update(SamplerState& state, const PolicyState& lstm,
                      std::span<const double> rewards_in, std::span<const double> probs_in,
                      std::span<const Trajectory> batch, double epsilon, TrajectoryNorm variant,
                      double baseline) {
  if (batch.empty()) throw Error(ErrorCode::invalid_argument, "REINFORCE needs N >= 1");
  const PolicyOutput out = policy_forward(state.policy, lstm, rewards_in, probs_in);
  const auto P = out.probs.values();
  std::vector<double> seed(P.size(), 0.0);
  const double n = static_cast<double>(batch.size());
  for (const auto& t : batch) {
    const double w = (t.reward - baseline) / n;
    if (w == 0.0) continue;
    const auto g = trajectory_logprob_grad(P, t.actions, epsilon, variant);
    for (std::size_t j = 0; j < seed.size(); ++j) seed[j] += w * g[j];
  }
  if (std::all_of(seed.begin(), seed.end(), [](double v) { return v == 0.0; })) return false;
  GradRecord grads = policy_backward(state.policy, lstm, rewards_in, probs_in, seed);
  // The optimizer descends, so hand it the negated ascent direction.
  for (auto& g : grads.grads) {
    for (auto& v : g.values()) v = -v;
  }
  state.optimizer.step(state.policy.params(), grads,
                       FreezeMask(state.policy.params().size(), true));
  return true;
}

Choice choose_datasets(const SamplerConfig& config, const MetaConfig& meta,
                       const ModelParams& model, const Suite& suite, SamplerState& state,
                       std::uint64_t step, Rng& rng) {
  const std::size_t k = suite.num_sources();
  const std::size_t m = std::min(meta.meta_batch_ctml, k);
  Choice choice;
  if (needs_feedback(config.strategy)) {
    const auto probe = sample_from_pool(suite.probe, std::min(meta.batch_size, suite.probe.size()), rng);
    choice.feedback = compute_feedback(model, suite, probe, meta.alpha_ctml,
                                       adapter_mask(model, meta.ctml_train_head),
                                       meta.batch_size, rng);
    choice.feedback->step = step;
    choice.feedback->previous_probs = state.last_probs;
  }

  if (config.strategy != Strategy::rl) {
    HeuristicChoice h;
    if (choice.feedback) {
      h = heuristic_probs(config.strategy, *choice.feedback, suite, m);
    } else {
      std::vector<std::size_t> sizes;
      for (const auto& s : suite.sources) sizes.push_back(s.nominal_size);
      h = heuristic_probs(config.strategy, {}, {}, sizes, m);
    }
    choice.datasets = h.chosen.empty() ? sample_trajectory(h.probs, m, 0.0, rng).actions : h.chosen;
    choice.probs = std::move(h.probs);
    state.last_probs = choice.probs;
    if (choice.feedback) state.last_rewards = choice.feedback->rewards;
    return choice;
  }

  const double eps = config.epsilon_at(step);
  const std::size_t g = config.horizon == 0 ? m : std::min(config.horizon, k);
  const PolicyState before = state.lstm;
  const PolicyOutput out = policy_forward(state.policy, before, state.last_rewards, state.last_probs);
  const auto P = out.probs.values();
  std::vector<Trajectory> batch;
  for (std::size_t n = 0; n < config.trajectories; ++n) {
    Trajectory t = sample_trajectory(P, g, eps, rng);
    t.logprob = trajectory_logprob(P, t.actions, eps, config.trajectory_norm);
    for (std::size_t a : t.actions) t.reward += choice.feedback->rewards[a];
    batch.push_back(std::move(t));
  }
  reinforce_update(state, before, state.last_rewards, state.last_probs, batch, eps,
                   config.trajectory_norm, config.baseline);
  choice.datasets = batch.front().actions;
  choice.probs.assign(P.begin(), P.end());
  state.lstm = out.state;
  state.last_rewards = choice.feedback->rewards;
  state.last_probs = choice.probs;
  return choice;
}

}  // namespace metatransfer
