// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "metatransfer/error.hpp"

namespace metatransfer {
namespace {

using Json = nlohmann::ordered_json;

constexpr std::uint64_t kSubset = 21;

[[noreturn]] void bad_config(std::string_view key, const std::string& detail) {
  throw Error(ErrorCode::invalid_config, std::string(key) + ": " + detail);
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
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

// Value codecs for config fields. Decoders throw std::invalid_argument; the
// field wrapper turns that into an error naming the key.

std::string encode(double v) { return format_double(v); }
std::string encode(std::size_t v) { return std::to_string(v); }
std::string encode(bool v) { return v ? "true" : "false"; }
std::string encode(const std::string& v) { return v; }
template <class T>
std::string encode(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + encode(v[i]);
  return out;
}
std::string encode(OptimizerKind v) { return std::string(to_string(v)); }
std::string encode(AdapterVariant v) { return std::string(to_string(v)); }
std::string encode(Strategy v) { return std::string(to_string(v)); }
std::string encode(TrajectoryNorm v) { return std::string(to_string(v)); }
std::string encode(TrainMode v) { return std::string(to_string(v)); }
std::string encode(AdaptMode v) { return std::string(to_string(v)); }

void decode(std::string_view s, double& out) {
  try {
    out = parse_double(s);
  } catch (const Error&) {
    throw std::invalid_argument("expected a number, got '" + std::string(s) + "'");
  }
}
void decode(std::string_view s, std::size_t& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(s) + "'");
  }
}
void decode(std::string_view s, bool& out) {
  if (s == "true") out = true;
  else if (s == "false") out = false;
  else throw std::invalid_argument("expected true or false, got '" + std::string(s) + "'");
}
void decode(std::string_view s, std::string& out) { out = std::string(s); }
template <class T>
void decode(std::string_view s, std::vector<T>& out) {
  out.clear();
  if (s.empty()) return;
  for (auto item : split(s, ',')) {
    T v{};
    decode(trim(item), v);
    out.push_back(v);
  }
}
template <class E, class Parse>
void decode_enum(std::string_view s, E& out, Parse parse) {
  try {
    out = parse(s);
  } catch (const Error& e) {
    throw std::invalid_argument(e.detail());
  }
}
void decode(std::string_view s, OptimizerKind& out) { decode_enum(s, out, optimizer_kind_from_string); }
void decode(std::string_view s, AdapterVariant& out) { decode_enum(s, out, adapter_variant_from_string); }
void decode(std::string_view s, Strategy& out) { decode_enum(s, out, strategy_from_string); }
void decode(std::string_view s, TrajectoryNorm& out) { decode_enum(s, out, trajectory_norm_from_string); }
void decode(std::string_view s, TrainMode& out) { decode_enum(s, out, train_mode_from_string); }
void decode(std::string_view s, AdaptMode& out) { decode_enum(s, out, adapt_mode_from_string); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <class Access>
Field field(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return encode(access(c)); },
          [access](RunConfig& c, std::string_view v) { decode(v, access(c)); }};
}

#define MT_FIELD(key, member) field(key, [](auto& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        // The model input width always follows the suite's feature width.
        {"suite.feature_dim", [](const RunConfig& c) { return encode(c.suite.feature_dim); },
         [](RunConfig& c, std::string_view v) {
           decode(v, c.suite.feature_dim);
           c.model.feature_dim = c.suite.feature_dim;
         }},
        MT_FIELD("suite.relatedness", suite.relatedness),
        MT_FIELD("suite.noise", suite.noise),
        MT_FIELD("suite.candidates", suite.candidates),
        MT_FIELD("suite.sizes", suite.sizes),
        MT_FIELD("suite.interaction", suite.interaction),
        MT_FIELD("suite.target_candidates", suite.target_candidates),
        MT_FIELD("suite.language_magnitudes", suite.language_magnitudes),
        MT_FIELD("suite.rotation_scale", suite.rotation_scale),
        MT_FIELD("suite.bias_scale", suite.bias_scale),
        MT_FIELD("suite.dev_size", suite.dev_size),
        MT_FIELD("suite.test_size", suite.test_size),
        MT_FIELD("suite.probe_size", suite.probe_size),
        MT_FIELD("suite.seed", suite.seed),
        MT_FIELD("model.hidden", model.hidden),
        MT_FIELD("model.adapter_dim", model.adapter_dim),
        MT_FIELD("model.layers", model.layers),
        MT_FIELD("model.adapter_variant", model.adapter_variant),
        MT_FIELD("model.backbone_gain", model.backbone_gain),
        MT_FIELD("meta.alpha_ctml", meta.alpha_ctml),
        MT_FIELD("meta.beta_ctml", meta.beta_ctml),
        MT_FIELD("meta.alpha_clml", meta.alpha_clml),
        MT_FIELD("meta.beta_clml", meta.beta_clml),
        MT_FIELD("meta.inner_steps", meta.inner_steps),
        MT_FIELD("meta.meta_batch_ctml", meta.meta_batch_ctml),
        MT_FIELD("meta.meta_batch_clml", meta.meta_batch_clml),
        MT_FIELD("meta.batch_size", meta.batch_size),
        MT_FIELD("meta.optimizer", meta.optimizer.kind),
        MT_FIELD("meta.optimizer.beta1", meta.optimizer.beta1),
        MT_FIELD("meta.optimizer.beta2", meta.optimizer.beta2),
        MT_FIELD("meta.optimizer.eps", meta.optimizer.eps),
        MT_FIELD("meta.optimizer.weight_decay", meta.optimizer.weight_decay),
        MT_FIELD("meta.optimizer.max_norm", meta.optimizer.max_norm),
        MT_FIELD("meta.ctml_train_head", meta.ctml_train_head),
        MT_FIELD("meta.clml_train_head", meta.clml_train_head),
        MT_FIELD("meta.max_steps", meta.max_steps),
        MT_FIELD("meta.eval_interval", meta.eval_interval),
        MT_FIELD("meta.patience", meta.patience),
        MT_FIELD("meta.adapt_steps", meta.adapt_steps),
        MT_FIELD("meta.adapt_eval_interval", meta.adapt_eval_interval),
        MT_FIELD("meta.finetune_rate", meta.finetune_rate),
        MT_FIELD("sampler.strategy", sampler.strategy),
        MT_FIELD("sampler.epsilon", sampler.epsilon),
        MT_FIELD("sampler.epsilon_final", sampler.epsilon_final),
        MT_FIELD("sampler.epsilon_anneal_steps", sampler.epsilon_anneal_steps),
        MT_FIELD("sampler.trajectories", sampler.trajectories),
        MT_FIELD("sampler.horizon", sampler.horizon),
        MT_FIELD("sampler.gamma", sampler.gamma),
        MT_FIELD("sampler.trajectory_norm", sampler.trajectory_norm),
        MT_FIELD("sampler.baseline", sampler.baseline),
        MT_FIELD("sampler.hidden", sampler.hidden),
        MT_FIELD("run.train_mode", train_mode),
        MT_FIELD("run.adapt_mode", adapt_mode),
        MT_FIELD("run.train_seed", train_seed),
        MT_FIELD("run.output_dir", output_dir),
    };
    return f;
  }();
  return table;
}

#undef MT_FIELD

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  bad_config(key, "unknown config key");
}

// JSON encodings. Doubles are stored as the 16 hex digits of their bit
// pattern, so every value survives a round trip exactly.

std::string hex(double v) {
  char buf[17];
  const auto res = std::to_chars(buf, buf + 16, std::bit_cast<std::uint64_t>(v), 16);
  std::string digits(buf, res.ptr);
  return std::string(16 - digits.size(), '0') + digits;
}

double unhex(std::string_view s) {
  std::uint64_t bits = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), bits, 16);
  if (s.size() != 16 || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::corrupt_file, "bad hex double '" + std::string(s) + "'");
  }
  return std::bit_cast<double>(bits);
}

Json doubles_json(std::span<const double> v) {
  Json out = Json::array();
  for (double x : v) out.push_back(hex(x));
  return out;
}

std::vector<double> doubles_from(const Json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(unhex(x.get<std::string>()));
  return out;
}

// One string per row, values separated by spaces.
Json tensor_json(const Tensor& t) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::string line;
    for (double v : t.row(r)) line += (line.empty() ? "" : " ") + hex(v);
    rows.push_back(line);
  }
  return Json{{"shape", {t.rows(), t.cols()}}, {"data", rows}};
}

Tensor tensor_from(const Json& j) {
  const std::size_t rows = j.at("shape").at(0).get<std::size_t>();
  const std::size_t cols = j.at("shape").at(1).get<std::size_t>();
  const Json& data = j.at("data");
  if (data.size() != rows) throw Error(ErrorCode::corrupt_file, "tensor row count mismatch");
  std::vector<double> values;
  values.reserve(rows * cols);
  for (const auto& row : data) {
    const std::string line = row.get<std::string>();
    if (line.empty() && cols == 0) continue;
    const auto items = split(line, ' ');
    if (items.size() != cols) throw Error(ErrorCode::corrupt_file, "tensor column count mismatch");
    for (auto item : items) values.push_back(unhex(item));
  }
  return Tensor({rows, cols}, std::move(values));
}

Json tensors_json(const std::vector<Tensor>& ts) {
  Json out = Json::array();
  for (const auto& t : ts) out.push_back(tensor_json(t));
  return out;
}

std::vector<Tensor> tensors_from(const Json& j) {
  std::vector<Tensor> out;
  for (const auto& t : j) out.push_back(tensor_from(t));
  return out;
}

GroupRole role_from(std::string_view s) {
  for (GroupRole r : {GroupRole::backbone, GroupRole::adapter, GroupRole::head, GroupRole::policy}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorCode::corrupt_file, "unknown parameter role '" + std::string(s) + "'");
}

Json params_json(const ParamSet& p) {
  Json out = Json::array();
  for (const auto& g : p.groups()) {
    out.push_back(Json{{"name", g.name},
                       {"role", std::string(to_string(g.role))},
                       {"tensor", tensor_json(g.value)}});
  }
  return out;
}

ParamSet params_from(const Json& j) {
  ParamSet p;
  for (const auto& g : j) {
    p.add(g.at("name").get<std::string>(), role_from(g.at("role").get<std::string>()),
          tensor_from(g.at("tensor")));
  }
  return p;
}

Json optimizer_json(const Optimizer& opt) {
  const auto& c = opt.config();
  return Json{{"kind", std::string(to_string(c.kind))},
              {"rate", hex(opt.rate())},
              {"beta1", hex(c.beta1)},
              {"beta2", hex(c.beta2)},
              {"eps", hex(c.eps)},
              {"weight_decay", hex(c.weight_decay)},
              {"max_norm", hex(c.max_norm)},
              {"steps", opt.steps()},
              {"first_moments", tensors_json(opt.first_moments())},
              {"second_moments", tensors_json(opt.second_moments())}};
}

Optimizer optimizer_from(const Json& j) {
  OptimizerConfig c;
  c.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
  c.beta1 = unhex(j.at("beta1").get<std::string>());
  c.beta2 = unhex(j.at("beta2").get<std::string>());
  c.eps = unhex(j.at("eps").get<std::string>());
  c.weight_decay = unhex(j.at("weight_decay").get<std::string>());
  c.max_norm = unhex(j.at("max_norm").get<std::string>());
  Optimizer opt(c, unhex(j.at("rate").get<std::string>()));
  opt.restore(j.at("steps").get<std::uint64_t>(), tensors_from(j.at("first_moments")),
              tensors_from(j.at("second_moments")));
  return opt;
}

Json config_json(const RunConfig& c, std::string_view prefix = "") {
  Json out = Json::object();
  for (const auto& f : fields()) {
    if (f.key.starts_with(prefix)) out[f.key] = f.get(c);
  }
  return out;
}

RunConfig config_from(const Json& j) {
  RunConfig c;
  for (const auto& [k, v] : j.items()) set_config_value(c, k, v.get<std::string>());
  return c;
}

Json spec_json(const DatasetSpec& s) {
  return Json{{"index", s.index},
              {"direction", tensor_json(s.direction)},
              {"relatedness", hex(s.relatedness)},
              {"noise", hex(s.noise)},
              {"nominal_size", s.nominal_size},
              {"candidates", s.candidates},
              {"interaction", hex(s.interaction)}};
}

DatasetSpec spec_from(const Json& j) {
  DatasetSpec s;
  s.index = j.at("index").get<std::size_t>();
  s.direction = tensor_from(j.at("direction"));
  s.relatedness = unhex(j.at("relatedness").get<std::string>());
  s.noise = unhex(j.at("noise").get<std::string>());
  s.nominal_size = j.at("nominal_size").get<std::size_t>();
  s.candidates = j.at("candidates").get<std::size_t>();
  s.interaction = unhex(j.at("interaction").get<std::string>());
  return s;
}

Json parse_versioned(std::string_view text, std::string_view kind) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::corrupt_file, std::string(kind) + " is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_unsigned()) {
    throw Error(ErrorCode::corrupt_file, std::string(kind) + " has no format_version");
  }
  const auto version = j["format_version"].get<std::uint64_t>();
  if (version != kFormatVersion) {
    throw Error(ErrorCode::version_mismatch,
                std::string(kind) + " format_version " + std::to_string(version) +
                    ", expected " + std::to_string(kFormatVersion));
  }
  if (j.value("kind", "") != kind) {
    throw Error(ErrorCode::corrupt_file, "document is not a " + std::string(kind));
  }
  return j;
}

// Runs `decode_body` and reports anything that goes wrong as a corrupt file.
template <class F>
auto corrupt_on_failure(std::string_view kind, F decode_body) {
  try {
    return decode_body();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::version_mismatch || e.code() == ErrorCode::corrupt_file) throw;
    throw Error(ErrorCode::corrupt_file, std::string(kind) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::corrupt_file, std::string(kind) + ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

// RunConfig -------------------------------------------------------------------

void RunConfig::validate() const {
  suite.validate();
  model.validate();
  meta.validate();
  sampler.validate();
  if (model.feature_dim != suite.feature_dim) {
    throw Error(ErrorCode::invalid_config, "model feature width differs from suite.feature_dim");
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const Field& f = find_field(key);
  try {
    f.set(config, trim(value));
  } catch (const std::invalid_argument& e) {
    bad_config(key, e.what());
  }
}

std::string get_config_value(const RunConfig& config, std::string_view key) {
  return find_field(key).get(config);
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    bad_config(trim(assignment), "expected KEY=VALUE");
  }
  set_config_value(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::vector<std::string> seen;
  for (auto raw : split(text, '\n')) {
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) bad_config(line, "expected KEY=VALUE");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) bad_config(key, "duplicate key");
    seen.emplace_back(key);
    if (key == "format_version") {
      if (value != std::to_string(kFormatVersion)) {
        throw Error(ErrorCode::version_mismatch, "config format_version " + std::string(value) +
                                                     ", expected " + std::to_string(kFormatVersion));
      }
      continue;
    }
    set_config_value(config, key, value);
  }
  config.validate();
  return config;
}

std::string format_run_config(const RunConfig& config) {
  std::string out = "format_version=" + std::to_string(kFormatVersion) + "\n";
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path));
}

// Suite document ----------------------------------------------------------------

std::string suite_to_json(const Suite& suite) {
  RunConfig c;
  c.suite = suite.config;
  Json languages = Json::array();
  for (const auto& l : suite.languages) {
    languages.push_back(Json{{"id", l.id},
                             {"magnitude", hex(l.magnitude)},
                             {"rotation", tensor_json(l.rotation)},
                             {"bias", tensor_json(l.bias)}});
  }
  Json sources = Json::array();
  for (const auto& s : suite.sources) sources.push_back(spec_json(s));
  Json doc{{"format_version", kFormatVersion},
           {"kind", "suite"},
           {"config", config_json(c, "suite.")},
           {"target", spec_json(suite.target)},
           {"sources", sources},
           {"languages", languages},
           {"pools", Json{{"dev", suite.config.dev_size},
                          {"test", suite.config.test_size},
                          {"probe", suite.config.probe_size}}}};
  return doc.dump(2) + "\n";
}

Suite suite_from_json(std::string_view text) {
  const Json doc = parse_versioned(text, "suite");
  return corrupt_on_failure("suite", [&] {
    RunConfig c = config_from(doc.at("config"));
    Suite suite = build_suite(c.suite);
    bool same = spec_from(doc.at("target")) == suite.target &&
                doc.at("sources").size() == suite.sources.size() &&
                doc.at("languages").size() == suite.languages.size();
    for (std::size_t j = 0; same && j < suite.sources.size(); ++j) {
      same = spec_from(doc.at("sources").at(j)) == suite.sources[j];
    }
    for (std::size_t l = 0; same && l < suite.languages.size(); ++l) {
      const Json& lj = doc.at("languages").at(l);
      same = lj.at("id").get<std::size_t>() == suite.languages[l].id &&
             unhex(lj.at("magnitude").get<std::string>()) == suite.languages[l].magnitude &&
             tensor_from(lj.at("rotation")) == suite.languages[l].rotation &&
             tensor_from(lj.at("bias")) == suite.languages[l].bias;
    }
    if (!same) {
      throw Error(ErrorCode::corrupt_file, "suite document does not match its generating config");
    }
    return suite;
  });
}

// Checkpoints -------------------------------------------------------------------

std::string checkpoint_to_json(const Checkpoint& cp) {
  const TrainState& s = cp.state;
  const SamplerState& sm = s.sampler;
  Json sampler{{"policy", Json{{"datasets", sm.policy.num_datasets()},
                               {"hidden", sm.policy.hidden()},
                               {"groups", params_json(sm.policy.params())}}},
               {"optimizer", optimizer_json(sm.optimizer)},
               {"lstm", Json{{"h", tensor_json(sm.lstm.h)}, {"c", tensor_json(sm.lstm.c)}}},
               {"last_rewards", doubles_json(sm.last_rewards)},
               {"last_probs", doubles_json(sm.last_probs)}};
  Json doc{{"format_version", kFormatVersion},
           {"kind", "checkpoint"},
           {"config", config_json(cp.config)},
           {"rng", Json{{"scheme", "derived-per-step"}, {"train_seed", cp.config.train_seed}}},
           {"step", s.step},
           {"stopped", s.stopped},
           {"best_dev", hex(s.best_dev)},
           {"stale_evals", s.stale_evals},
           {"model", params_json(s.model.params())},
           {"best", params_json(s.best.params())},
           {"optimizer", optimizer_json(s.optimizer)},
           {"sampler", sampler}};
  return doc.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
  const Json doc = parse_versioned(text, "checkpoint");
  return corrupt_on_failure("checkpoint", [&] {
    Checkpoint cp;
    cp.config = config_from(doc.at("config"));
    if (doc.at("rng").at("train_seed").get<std::uint64_t>() != cp.config.train_seed) {
      throw Error(ErrorCode::corrupt_file, "rng seed disagrees with the config");
    }
    TrainState& s = cp.state;
    s.step = doc.at("step").get<std::uint64_t>();
    s.stopped = doc.at("stopped").get<bool>();
    s.best_dev = unhex(doc.at("best_dev").get<std::string>());
    s.stale_evals = doc.at("stale_evals").get<std::size_t>();
    s.model = ModelParams(cp.config.model, params_from(doc.at("model")));
    s.best = ModelParams(cp.config.model, params_from(doc.at("best")));
    s.optimizer = optimizer_from(doc.at("optimizer"));
    const Json& sj = doc.at("sampler");
    const Json& pj = sj.at("policy");
    s.sampler.policy = Policy(pj.at("datasets").get<std::size_t>(), pj.at("hidden").get<std::size_t>(),
                              params_from(pj.at("groups")));
    s.sampler.optimizer = optimizer_from(sj.at("optimizer"));
    s.sampler.lstm = {tensor_from(sj.at("lstm").at("h")), tensor_from(sj.at("lstm").at("c"))};
    s.sampler.last_rewards = doubles_from(sj.at("last_rewards"));
    s.sampler.last_probs = doubles_from(sj.at("last_probs"));
    return cp;
  });
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, checkpoint_to_json(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

// Runs --------------------------------------------------------------------------

Checkpoint train_run(const RunConfig& config, const Suite& suite, MetricsLog& log,
                     const std::optional<Checkpoint>& resume, std::uint64_t stop_at) {
  config.validate();
  std::optional<Trainer> trainer;
  if (resume) {
    RunConfig saved = resume->config;
    saved.output_dir = config.output_dir;
    if (!(saved == config)) {
      throw Error(ErrorCode::invalid_config, "checkpoint was written under a different config");
    }
    trainer.emplace(config.train_mode, suite, config.meta, config.sampler, config.train_seed,
                    resume->state);
  } else {
    trainer.emplace(config.train_mode, suite, config.meta, config.sampler, config.train_seed,
                    initial_model(config.model, config.train_seed));
  }
  trainer->run(log, stop_at);
  return {config, trainer->state()};
}

const ModelParams& checkpoint_model(const Checkpoint& checkpoint) {
  const TrainState& s = checkpoint.state;
  return s.best_dev >= 0.0 ? s.best : s.model;
}

std::vector<LanguageResult> evaluate_languages(const RunConfig& config, const Suite& suite,
                                               const ModelParams& model, MetricsLog& log) {
  std::vector<LanguageResult> out;
  for (std::size_t l = 0; l < suite.num_languages(); ++l) {
    const ModelParams adapted =
        adapt(config.adapt_mode, model, suite, l, config.meta, config.train_seed, log);
    out.push_back({l, suite.languages[l].magnitude, config.adapt_mode,
                   evaluate(adapted, suite.test[l])});
  }
  return out;
}

RunResult run(const RunConfig& config, const Suite& suite) {
  RunResult r{{}, MetricsLog(suite.num_sources()), {}};
  r.checkpoint = train_run(config, suite, r.log);
  r.results = evaluate_languages(config, suite, checkpoint_model(r.checkpoint), r.log);
  return r;
}

RunResult run(const RunConfig& config) {
  config.validate();
  return run(config, build_suite(config.suite));
}

std::string results_to_csv(std::span<const LanguageResult> results) {
  std::string out = "# format_version=1\nlanguage,magnitude,adapt_mode,test_acc\n";
  for (const auto& r : results) {
    out += std::to_string(r.language) + "," + format_double(r.magnitude) + "," +
           std::string(to_string(r.adapt)) + "," + format_double(r.test_acc) + "\n";
  }
  return out;
}

void write_run(const RunResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "config.txt", format_run_config(result.checkpoint.config));
  write_file(dir / "metrics.csv", result.log.to_csv());
  save_checkpoint(result.checkpoint, dir / "checkpoint.json");
  write_file(dir / "results.csv", results_to_csv(result.results));
}

// Studies -----------------------------------------------------------------------

RunConfig seeded(const RunConfig& config, std::uint64_t r) {
  RunConfig c = config;
  c.suite.seed += r;
  c.train_seed += r;
  return c;
}

StrategyRun run_strategy(const RunConfig& config, const Suite& suite, Strategy strategy,
                         std::uint64_t label) {
  RunConfig c = config;
  c.sampler.strategy = strategy;
  c.validate();
  const std::size_t k = suite.num_sources();
  MetricsLog log(k);
  Trainer trainer(TrainMode::ctml, suite, c.meta, c.sampler, c.train_seed,
                  initial_model(c.model, c.train_seed));
  std::vector<std::vector<double>> probs;
  while (trainer.step(log)) probs.push_back(trainer.state().sampler.last_probs);

  StrategyRun out;
  out.strategy = strategy;
  out.seed = label;
  out.steps = trainer.state().step;
  out.best_dev = trainer.state().best_dev;
  out.test_acc = evaluate(trainer.result(), suite.test.front());
  out.tail_probs.assign(k, 0.0);
  const std::size_t from = probs.size() > 100 ? probs.size() - 100 : 0;
  for (std::size_t s = from; s < probs.size(); ++s) {
    for (std::size_t j = 0; j < k; ++j) out.tail_probs[j] += probs[s][j] / double(probs.size() - from);
  }
  for (const auto& r : log.records()) {
    if (!std::isnan(r.dev_acc)) out.dev_curve.emplace_back(r.step, r.dev_acc);
  }
  return out;
}

SamplerComparison compare_samplers(const RunConfig& config, std::span<const Strategy> strategies,
                                   std::span<const std::uint64_t> seeds) {
  if (strategies.empty() || seeds.empty()) {
    throw Error(ErrorCode::invalid_argument, "compare_samplers needs strategies and seeds");
  }
  SamplerComparison out;
  std::vector<std::vector<StrategyRun>> by_strategy(strategies.size());
  for (std::uint64_t r : seeds) {
    const RunConfig c = seeded(config, r);
    const Suite suite = build_suite(c.suite);
    for (std::size_t i = 0; i < strategies.size(); ++i) {
      by_strategy[i].push_back(run_strategy(c, suite, strategies[i], r));
    }
  }
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    std::vector<double> dev, test;
    for (const auto& run : by_strategy[i]) {
      dev.push_back(run.best_dev);
      test.push_back(run.test_acc);
      out.runs.push_back(run);
    }
    out.summary.push_back({strategies[i], mean(dev), mean(test), stddev(test), test.size()});
  }
  return out;
}

std::string SamplerComparison::table_csv() const {
  std::string out = "# format_version=1\nstrategy,runs,mean_dev_acc,mean_test_acc,std_test_acc\n";
  for (const auto& s : summary) {
    out += std::string(to_string(s.strategy)) + "," + std::to_string(s.runs) + "," +
           format_double(s.mean_dev) + "," + format_double(s.mean_test) + "," +
           format_double(s.std_test) + "\n";
  }
  return out;
}

std::string SamplerComparison::curves_csv() const {
  std::string out = "# format_version=1\nstrategy,seed,step,dev_acc\n";
  for (const auto& r : runs) {
    for (const auto& [step, acc] : r.dev_curve) {
      out += std::string(to_string(r.strategy)) + "," + std::to_string(r.seed) + "," +
             std::to_string(step) + "," + format_double(acc) + "\n";
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> ablation_subsets(const RunConfig& config, std::size_t size) {
  const std::size_t k = config.suite.num_sources();
  if (size < 1 || size > k) {
    throw Error(ErrorCode::invalid_argument,
                "subset size " + std::to_string(size) + " outside [1, " + std::to_string(k) + "]");
  }
  std::vector<std::size_t> all(k);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (size == k) return {all};
  if (size == 1) {
    std::vector<std::vector<std::size_t>> singles;
    for (std::size_t j : all) singles.push_back({j});
    return singles;
  }
  Rng rng(derive_seed(config.train_seed, {kSubset, size}));
  for (std::size_t i = 0; i < size; ++i) std::swap(all[i], all[i + rng.below(k - i)]);
  all.resize(size);
  std::sort(all.begin(), all.end());
  return {all};
}

Suite restrict_sources(const Suite& suite, std::span<const std::size_t> subset) {
  Suite out = suite;
  out.sources.clear();
  SuiteConfig& c = out.config;
  SuiteConfig full = suite.config;
  c.relatedness.clear();
  c.noise.clear();
  c.candidates.clear();
  c.sizes.clear();
  for (std::size_t j : subset) {
    if (j >= suite.num_sources()) {
      throw Error(ErrorCode::invalid_argument, "no source dataset " + std::to_string(j));
    }
    out.sources.push_back(suite.sources[j]);
    c.relatedness.push_back(full.relatedness[j]);
    c.noise.push_back(full.noise[j]);
    c.candidates.push_back(full.candidates[j]);
    c.sizes.push_back(full.sizes[j]);
  }
  return out;
}

std::vector<AblationRow> ablate_adapters(const RunConfig& config, std::span<const std::size_t> sizes,
                                         std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error(ErrorCode::invalid_argument, "ablate_adapters needs seeds");
  config.validate();
  std::vector<AblationRow> rows;
  for (std::size_t n : sizes) {
    for (auto& subset : ablation_subsets(config, n)) rows.push_back({n, subset, {}, 0.0, 0.0});
  }
  for (std::uint64_t r : seeds) {
    const RunConfig c = seeded(config, r);
    const Suite suite = build_suite(c.suite);
    for (auto& row : rows) {
      const Suite sub = restrict_sources(suite, row.subset);
      MetricsLog log(sub.num_sources());
      const ModelParams model = train(c.train_mode, sub, c.meta, c.sampler, c.train_seed,
                                      initial_model(c.model, c.train_seed), log);
      row.test_acc.push_back(evaluate(model, sub.test.front()));
    }
  }
  for (auto& row : rows) {
    row.mean_test = mean(row.test_acc);
    row.std_test = stddev(row.test_acc);
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "# format_version=1\nsize,subset,runs,mean_test_acc,std_test_acc\n";
  for (const auto& row : rows) {
    std::string subset;
    for (std::size_t i = 0; i < row.subset.size(); ++i) {
      subset += (i ? ";" : "") + std::to_string(row.subset[i]);
    }
    out += std::to_string(row.size) + "," + subset + "," + std::to_string(row.test_acc.size()) +
           "," + format_double(row.mean_test) + "," + format_double(row.std_test) + "\n";
  }
  return out;
}

}  // namespace metatransfer
