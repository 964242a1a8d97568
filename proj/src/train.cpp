// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/train.hpp"

#include "metatransfer/error.hpp"

namespace metatransfer {
namespace {

constexpr std::uint64_t kInit = 11;
constexpr std::uint64_t kChoose = 12;
constexpr std::uint64_t kEpisode = 13;
constexpr std::uint64_t kAdapt = 14;
constexpr std::uint64_t kPolicyInit = 15;

std::vector<MultiChoiceInstance> source_batch(const Suite& suite, std::size_t dataset,
                                              std::size_t n, Rng& rng) {
  std::vector<MultiChoiceInstance> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back(suite.source_language().apply(sample_instance(suite.sources[dataset], rng)));
  }
  return batch;
}

}  // namespace

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::ctml: return "ctml";
    case TrainMode::sequential: return "sequential";
    case TrainMode::multitask: return "multitask";
  }
  return "?";
}

TrainMode train_mode_from_string(std::string_view s) {
  for (TrainMode m : {TrainMode::ctml, TrainMode::sequential, TrainMode::multitask}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::unknown_mode, "unknown training mode " + std::string(s));
}

std::string_view to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::none: return "none";
    case AdaptMode::clml: return "clml";
    case AdaptMode::mono: return "mono";
    case AdaptMode::target_only: return "target_only";
  }
  return "?";
}

AdaptMode adapt_mode_from_string(std::string_view s) {
  for (AdaptMode m : {AdaptMode::none, AdaptMode::clml, AdaptMode::mono, AdaptMode::target_only}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::unknown_mode, "unknown adaptation mode " + std::string(s));
}

ModelParams initial_model(const ModelShape& shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {kInit}));
  return ModelParams::init(shape, rng);
}

Trainer::Trainer(TrainMode mode, const Suite& suite, const MetaConfig& meta,
                 const SamplerConfig& sampler, std::uint64_t seed, ModelParams init)
    : mode_(mode), suite_(suite), meta_(meta), sampler_(sampler), seed_(seed) {
  meta_.validate();
  sampler_.validate();
  if (suite.num_sources() == 0) throw Error(ErrorCode::invalid_argument, "suite has no sources");
  state_.model = std::move(init);
  state_.best = state_.model;
  state_.optimizer = Optimizer(meta_.optimizer, meta_.beta_ctml);
  Rng rng(derive_seed(seed, {kPolicyInit}));
  state_.sampler = SamplerState::init(sampler_, suite.num_sources(), rng);
}

Trainer::Trainer(TrainMode mode, const Suite& suite, const MetaConfig& meta,
                 const SamplerConfig& sampler, std::uint64_t seed, TrainState state)
    : mode_(mode), suite_(suite), meta_(meta), sampler_(sampler), seed_(seed),
      state_(std::move(state)) {
  meta_.validate();
  sampler_.validate();
}

bool Trainer::finished() const { return state_.stopped || state_.step >= meta_.max_steps; }

const ModelParams& Trainer::result() const {
  return state_.best_dev >= 0.0 ? state_.best : state_.model;
}

void Trainer::evaluate_dev(MetricsRecord& record) {
  const double acc = evaluate(state_.model, suite_.dev.front());
  record.dev_acc = acc;
  if (acc > state_.best_dev) {
    state_.best_dev = acc;
    state_.best = state_.model;
    state_.stale_evals = 0;
  } else {
    ++state_.stale_evals;
  }
  // Sequential training must visit every dataset, so it runs its full schedule.
  if (mode_ != TrainMode::sequential && meta_.patience > 0 &&
      state_.stale_evals >= meta_.patience) {
    state_.stopped = true;
  }
}

bool Trainer::step(MetricsLog& log) {
  if (finished()) return false;
  const std::uint64_t s = state_.step;
  const std::size_t k = suite_.num_sources();
  MetricsRecord record;
  record.step = log.next_step();
  record.phase = "train";
  record.mode = std::string(to_string(mode_));
  record.seed = seed_;

  switch (mode_) {
    case TrainMode::ctml: {
      Rng choose_rng(derive_seed(seed_, {kChoose, s}));
      const Choice choice = choose_datasets(sampler_, meta_, state_.model, suite_,
                                            state_.sampler, s, choose_rng);
      std::vector<Episode> episodes;
      for (std::size_t j : choice.datasets) {
        Rng rng(derive_seed(seed_, {kEpisode, j, 0, s}));
        episodes.push_back(sample_episode(suite_.sources[j], suite_.source_language(),
                                          meta_.batch_size, meta_.batch_size, rng));
      }
      const auto result = ctml_step(state_.model, episodes, meta_, state_.optimizer);
      record.dataset_ids = choice.datasets;
      record.query_loss = result.mean_query_loss();
      if (choice.feedback) {
        record.l_original = choice.feedback->l_original;
        record.l_sources = choice.feedback->l_sources;
      }
      break;
    }
    case TrainMode::sequential:
    case TrainMode::multitask: {
      std::vector<std::size_t> datasets;
      if (mode_ == TrainMode::sequential) {
        datasets.push_back(static_cast<std::size_t>(s * k / meta_.max_steps));
      } else {
        for (std::size_t j = 0; j < k; ++j) datasets.push_back(j);
      }
      const FreezeMask mask = adapter_mask(state_.model, meta_.ctml_train_head);
      GradRecord grad = GradRecord::zeros_like(state_.model.params());
      double loss = 0.0;
      for (std::size_t j : datasets) {
        Rng rng(derive_seed(seed_, {kEpisode, j, 0, s}));
        const auto batch = source_batch(suite_, j, meta_.batch_size, rng);
        const auto lg = batch_loss(batch, state_.model, mask);
        grad.add_scaled(lg.grads, 1.0 / static_cast<double>(datasets.size()));
        loss += lg.loss / static_cast<double>(datasets.size());
      }
      state_.optimizer.step(state_.model.params(), grad, mask);
      record.dataset_ids = datasets;
      record.query_loss = loss;
      break;
    }
  }

  ++state_.step;
  if (state_.step % meta_.eval_interval == 0 || state_.step == meta_.max_steps) {
    evaluate_dev(record);
  }
  log.append(std::move(record));
  return true;
}

void Trainer::run(MetricsLog& log, std::uint64_t max_step) {
  while (state_.step < max_step && step(log)) {
  }
}

ModelParams train(TrainMode mode, const Suite& suite, const MetaConfig& meta,
                  const SamplerConfig& sampler, std::uint64_t seed, const ModelParams& init,
                  MetricsLog& log) {
  Trainer trainer(mode, suite, meta, sampler, seed, init);
  trainer.run(log);
  return trainer.result();
}

ModelParams adapt(AdaptMode mode, const ModelParams& params, const Suite& suite,
                  std::size_t language, const MetaConfig& meta, std::uint64_t seed,
                  MetricsLog& log) {
  meta.validate();
  if (language >= suite.num_languages()) {
    throw Error(ErrorCode::invalid_argument, "no language " + std::to_string(language));
  }
  ModelParams model = params;
  if (mode == AdaptMode::none) return model;
  const auto& source_dev = suite.dev.front();
  const auto& target_dev = suite.dev[language];
  const std::size_t n = meta.batch_size;
  const double rate = mode == AdaptMode::target_only ? meta.finetune_rate : meta.beta_clml;
  Optimizer opt(meta.optimizer, rate);
  const FreezeMask full = full_mask(model);

  for (std::size_t s = 0; s < meta.adapt_steps; ++s) {
    MetricsRecord record;
    record.step = log.next_step();
    record.phase = "adapt";
    record.mode = std::string(to_string(mode));
    record.language = language;
    record.seed = seed;
    Rng rng(derive_seed(seed, {kAdapt, language, s}));
    if (mode == AdaptMode::target_only) {
      const auto batch = sample_from_pool(target_dev, n, rng);
      const auto lg = batch_loss(batch, model, full);
      opt.step(model.params(), lg.grads, full);
      record.query_loss = lg.loss;
    } else {
      std::vector<Episode> episodes;
      for (std::size_t e = 0; e < meta.meta_batch_clml; ++e) {
        if (mode == AdaptMode::clml) {
          episodes.push_back(sample_pool_episode(source_dev, 0, target_dev, language,
                                                 suite.num_sources(), n, n, rng));
        } else {
          episodes.push_back(sample_pool_episode(target_dev, language, target_dev, language,
                                                 suite.num_sources(), n, n, rng));
        }
      }
      const std::size_t source = mode == AdaptMode::clml ? 0 : language;
      record.query_loss = clml_step(model, episodes, meta, opt, source).mean_query_loss();
    }
    if ((s + 1) % meta.adapt_eval_interval == 0 || s + 1 == meta.adapt_steps) {
      record.dev_acc = evaluate(model, target_dev);
    }
    log.append(std::move(record));
  }
  return model;
}

}  // namespace metatransfer
