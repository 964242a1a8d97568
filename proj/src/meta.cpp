// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/meta.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

#include "metatransfer/error.hpp"

namespace metatransfer {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adamw";
}

OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adamw") return OptimizerKind::adamw;
  throw Error(ErrorCode::invalid_config, "unknown optimizer " + std::string(s));
}

void Optimizer::step(ParamSet& params, const GradRecord& grads, const FreezeMask& mask) {
  if (grads.grads.size() != params.size() || mask.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "optimizer: parameter, gradient and mask sizes differ");
  }
  double scale = 1.0;
  if (config_.max_norm > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!mask.trainable(i)) continue;
      for (double g : grads.grads[i].values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.max_norm) scale = config_.max_norm / norm;
  }
  ++steps_;

  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!mask.trainable(i)) continue;
      auto p = params.value(i).values();
      const auto g = grads.grads[i].values();
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] -= rate_ * (scale * g[j] + config_.weight_decay * p[j]);
      }
    }
    return;
  }

  if (m_.empty()) {
    for (const auto& group : params.groups()) {
      m_.emplace_back(group.value.rows(), group.value.cols());
      v_.emplace_back(group.value.rows(), group.value.cols());
    }
  }
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.trainable(i)) continue;
    auto p = params.value(i).values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    const auto g = grads.grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = scale * g[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      p[j] *= 1.0 - rate_ * config_.weight_decay;
      p[j] -= rate_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

void Optimizer::restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw Error(ErrorCode::corrupt_file, "optimizer moment count mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void MetaConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); };
  if (!(alpha_ctml > 0.0)) fail("meta.alpha_ctml must be > 0");
  if (!(beta_ctml > 0.0)) fail("meta.beta_ctml must be > 0");
  if (!(alpha_clml > 0.0)) fail("meta.alpha_clml must be > 0");
  if (!(beta_clml > 0.0)) fail("meta.beta_clml must be > 0");
  if (!(finetune_rate > 0.0)) fail("meta.finetune_rate must be > 0");
  if (inner_steps < 1) fail("meta.inner_steps must be >= 1");
  if (meta_batch_ctml < 1) fail("meta.meta_batch_ctml must be >= 1");
  if (meta_batch_clml < 1) fail("meta.meta_batch_clml must be >= 1");
  if (batch_size < 1) fail("meta.batch_size must be >= 1");
  if (eval_interval < 1) fail("meta.eval_interval must be >= 1");
  if (adapt_eval_interval < 1) fail("meta.adapt_eval_interval must be >= 1");
  if (optimizer.max_norm < 0.0) fail("meta.max_norm must be >= 0");
}

ModelParams inner_adapt(const ModelParams& model, std::span<const MultiChoiceInstance> support,
                        double alpha, const FreezeMask& mask, std::size_t steps) {
  if (support.empty()) throw Error(ErrorCode::empty_batch, "inner_adapt on an empty support set");
  ModelParams adapted = model;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto lg = batch_loss(support, adapted, mask);
    sgd_step(adapted.params(), lg.grads, mask, alpha);
  }
  return adapted;
}

double MetaStepResult::mean_query_loss() const {
  if (query_losses.empty()) return MetricsRecord::kMissing;
  double s = 0.0;
  for (double l : query_losses) s += l;
  return s / static_cast<double>(query_losses.size());
}

MetaStepResult fomaml_step(ModelParams& model, std::span<const Episode> episodes,
                           const FreezeMask& mask, double alpha, std::size_t inner_steps,
                           Optimizer& opt) {
  if (episodes.empty()) throw Error(ErrorCode::invalid_argument, "meta step needs M >= 1 episodes");
  MetaStepResult out;
  out.outer_grad = GradRecord::zeros_like(model.params());
  const double w = 1.0 / static_cast<double>(episodes.size());
  for (const auto& ep : episodes) {
    const ModelParams adapted = inner_adapt(model, ep.support, alpha, mask, inner_steps);
    const auto lg = batch_loss(ep.query, adapted, mask);
    out.query_losses.push_back(lg.loss);
    out.outer_grad.add_scaled(lg.grads, w);
  }
  opt.step(model.params(), out.outer_grad, mask);
  return out;
}

MetaStepResult ctml_step(ModelParams& model, std::span<const Episode> episodes,
                         const MetaConfig& config, Optimizer& opt) {
  return fomaml_step(model, episodes, adapter_mask(model, config.ctml_train_head),
                     config.alpha_ctml, config.inner_steps, opt);
}

MetaStepResult clml_step(ModelParams& model, std::span<const Episode> episodes,
                         const MetaConfig& config, Optimizer& opt, std::size_t source_language) {
  for (const auto& ep : episodes) {
    if (ep.support_language != source_language) {
      throw Error(ErrorCode::language_mismatch,
                  "clml support must come from language " + std::to_string(source_language) +
                      ", got " + std::to_string(ep.support_language));
    }
  }
  return fomaml_step(model, episodes, last_layer_mask(model, config.clml_train_head),
                     config.alpha_clml, config.inner_steps, opt);
}

double evaluate(const ModelParams& model, std::span<const MultiChoiceInstance> pool) {
  if (pool.empty()) throw Error(ErrorCode::empty_batch, "evaluate on an empty pool");
  const auto predicted = predict(pool, model);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) correct += predicted[i] == pool[i].label;
  return static_cast<double>(correct) / static_cast<double>(pool.size());
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::corrupt_file, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

namespace {

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::corrupt_file, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

constexpr std::string_view kCsvVersionLine = "# format_version=1";

std::string header(std::size_t k) {
  std::string h = "step,phase,mode,language,dataset_ids,L_original";
  for (std::size_t j = 1; j <= k; ++j) h += ",L_s" + std::to_string(j);
  return h + ",query_loss,dev_acc,seed";
}

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

void MetricsLog::append(MetricsRecord record) {
  if (!records_.empty() && record.step <= records_.back().step) {
    throw Error(ErrorCode::invalid_argument, "metrics steps must be strictly increasing");
  }
  if (record.l_sources.empty()) record.l_sources.assign(num_sources_, MetricsRecord::kMissing);
  if (record.l_sources.size() != num_sources_) {
    throw Error(ErrorCode::shape_mismatch, "metrics record has " +
                                               std::to_string(record.l_sources.size()) +
                                               " source losses, log expects " +
                                               std::to_string(num_sources_));
  }
  records_.push_back(std::move(record));
}

void MetricsLog::write_csv(std::ostream& out) const {
  out << kCsvVersionLine << '\n' << header(num_sources_) << '\n';
  for (const auto& r : records_) {
    out << r.step << ',' << r.phase << ',' << r.mode << ',' << r.language << ',';
    for (std::size_t i = 0; i < r.dataset_ids.size(); ++i) {
      out << (i ? ";" : "") << r.dataset_ids[i];
    }
    out << ',' << format_double(r.l_original);
    for (double l : r.l_sources) out << ',' << format_double(l);
    out << ',' << format_double(r.query_loss) << ',' << format_double(r.dev_acc) << ',' << r.seed
        << '\n';
  }
}

std::string MetricsLog::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

MetricsLog MetricsLog::parse_csv(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::corrupt_file, "metrics csv is empty");
  if (lines.front() != kCsvVersionLine) {
    if (lines.front().rfind("# format_version=", 0) == 0) {
      throw Error(ErrorCode::version_mismatch, "metrics csv has " + std::string(lines.front()));
    }
    throw Error(ErrorCode::corrupt_file, "metrics csv lacks a format_version line");
  }
  lines.erase(lines.begin());
  if (lines.empty()) throw Error(ErrorCode::corrupt_file, "metrics csv has no header");
  const auto head = split(lines.front(), ',');
  if (head.size() < 9) throw Error(ErrorCode::corrupt_file, "metrics csv header too short");
  const std::size_t k = head.size() - 9;
  if (lines.front() != header(k)) throw Error(ErrorCode::corrupt_file, "unexpected metrics header");
  MetricsLog log(k);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto f = split(lines[n], ',');
    if (f.size() != head.size()) {
      throw Error(ErrorCode::corrupt_file, "metrics row " + std::to_string(n) + " has " +
                                               std::to_string(f.size()) + " fields");
    }
    MetricsRecord r;
    r.step = parse_u64(f[0]);
    r.phase = std::string(f[1]);
    r.mode = std::string(f[2]);
    r.language = parse_u64(f[3]);
    if (!f[4].empty()) {
      for (auto id : split(f[4], ';')) r.dataset_ids.push_back(parse_u64(id));
    }
    r.l_original = parse_double(f[5]);
    for (std::size_t j = 0; j < k; ++j) r.l_sources.push_back(parse_double(f[6 + j]));
    r.query_loss = parse_double(f[6 + k]);
    r.dev_acc = parse_double(f[7 + k]);
    r.seed = parse_u64(f[8 + k]);
    log.append(std::move(r));
  }
  return log;
}

bool MetricsLog::operator==(const MetricsLog& other) const {
  if (num_sources_ != other.num_sources_ || records_.size() != other.records_.size()) return false;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& a = records_[i];
    const auto& b = other.records_[i];
    if (a.step != b.step || a.phase != b.phase || a.mode != b.mode || a.language != b.language ||
        a.dataset_ids != b.dataset_ids || a.seed != b.seed ||
        !same_double(a.l_original, b.l_original) || !same_double(a.query_loss, b.query_loss) ||
        !same_double(a.dev_acc, b.dev_acc) || a.l_sources.size() != b.l_sources.size()) {
      return false;
    }
    for (std::size_t j = 0; j < a.l_sources.size(); ++j) {
      if (!same_double(a.l_sources[j], b.l_sources[j])) return false;
    }
  }
  return true;
}

}  // namespace metatransfer
