// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Every subcommand takes --config, --seed, --out and
// any number of --set KEY=VALUE overrides. Failures print a single line
// `error: <code>: <detail>` on stderr and exit with status 1 (2 for usage).

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metatransfer/error.hpp"
#include "metatransfer/harness.hpp"

namespace fs = std::filesystem;
using namespace metatransfer;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "RunConfig file (key=value lines)");
  cmd->add_option("--seed", c.seed, "Sets both suite.seed and run.train_seed");
  cmd->add_option("--out", c.out, "Output directory (overrides run.output_dir)");
  cmd->add_option("--set", c.overrides, "KEY=VALUE override, repeatable");
}

RunConfig resolve(const Common& c, std::optional<RunConfig> base = std::nullopt) {
  RunConfig config = base ? *base : (c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path));
  if (c.seed) {
    config.suite.seed = *c.seed;
    config.train_seed = *c.seed;
  }
  if (!c.out.empty()) config.output_dir = c.out;
  for (const auto& o : c.overrides) apply_override(config, o);
  config.validate();
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorCode::io_error, "cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::uint64_t> seed_range(std::size_t n) {
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = i;
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-task and cross-lingual meta-transfer on synthetic multiple-choice suites"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint_path, metrics_path, strategies = "FIRST,LAST,SAMPLE";
  std::string sizes = "1,2,3,4,5,6";
  std::uint64_t stop_at = UINT64_MAX;
  std::size_t seeds = 10;

  auto* gen = app.add_subcommand("gen-tasks", "Generate a task suite and write suite.json");
  auto* train = app.add_subcommand("train", "Source-side training; writes checkpoint.json and metrics.csv");
  auto* adapt = app.add_subcommand("adapt", "Adapt a checkpoint to every language and score it");
  auto* eval = app.add_subcommand("eval", "Zero-shot test accuracy of a checkpoint per language");
  auto* runcmd = app.add_subcommand("run", "Train, adapt and evaluate in one go");
  auto* compare = app.add_subcommand("compare-samplers", "Compare sampling strategies over seeds");
  auto* ablate = app.add_subcommand("ablate-adapters", "Target accuracy by number of source datasets");
  for (auto* cmd : {gen, train, adapt, eval, runcmd, compare, ablate}) add_common(cmd, common);
  train->add_option("--resume", checkpoint_path, "Checkpoint to continue from");
  train->add_option("--metrics", metrics_path, "Metrics CSV to continue (with --resume)");
  train->add_option("--stop-at", stop_at, "Stop after this many training steps");
  adapt->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
  compare->add_option("--strategies", strategies, "Comma-separated strategy names");
  compare->add_option("--seeds", seeds, "Number of seeded repetitions");
  ablate->add_option("--sizes", sizes, "Comma-separated subset sizes");
  ablate->add_option("--seeds", seeds, "Number of seeded repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) {
      const RunConfig config = resolve(common);
      const Suite suite = build_suite(config.suite);
      const fs::path dir = config.output_dir;
      write_text(dir / "suite.json", suite_to_json(suite));
      write_text(dir / "config.txt", format_run_config(config));
      std::printf("wrote %s\n", (dir / "suite.json").c_str());
    } else if (train->parsed()) {
      std::optional<Checkpoint> resume;
      if (!checkpoint_path.empty()) resume = load_checkpoint(checkpoint_path);
      const RunConfig config = resolve(common, resume ? std::optional(resume->config) : std::nullopt);
      const Suite suite = build_suite(config.suite);
      MetricsLog log(suite.num_sources());
      if (!metrics_path.empty()) log = MetricsLog::parse_csv(read_text(metrics_path));
      const Checkpoint cp = train_run(config, suite, log, resume, stop_at);
      const fs::path dir = config.output_dir;
      write_text(dir / "config.txt", format_run_config(config));
      write_text(dir / "metrics.csv", log.to_csv());
      save_checkpoint(cp, dir / "checkpoint.json");
      std::printf("step %llu best_dev %s\n", static_cast<unsigned long long>(cp.state.step),
                  format_double(cp.state.best_dev).c_str());
    } else if (adapt->parsed() || eval->parsed()) {
      const Checkpoint cp = load_checkpoint(checkpoint_path);
      RunConfig config = resolve(common, cp.config);
      if (eval->parsed()) config.adapt_mode = AdaptMode::none;
      const Suite suite = build_suite(config.suite);
      MetricsLog log(suite.num_sources());
      const auto results = evaluate_languages(config, suite, checkpoint_model(cp), log);
      const fs::path dir = config.output_dir;
      const std::string csv = results_to_csv(results);
      write_text(dir / "results.csv", csv);
      if (adapt->parsed()) write_text(dir / "adapt_metrics.csv", log.to_csv());
      std::fputs(csv.c_str(), stdout);
    } else if (runcmd->parsed()) {
      const RunConfig config = resolve(common);
      const RunResult result = run(config);
      write_run(result, config.output_dir);
      std::fputs(results_to_csv(result.results).c_str(), stdout);
    } else if (compare->parsed()) {
      const RunConfig config = resolve(common);
      std::vector<Strategy> list;
      std::stringstream ss(strategies);
      for (std::string name; std::getline(ss, name, ',');) list.push_back(strategy_from_string(name));
      const auto cmp = compare_samplers(config, list, seed_range(seeds));
      const fs::path dir = config.output_dir;
      write_text(dir / "samplers.csv", cmp.table_csv());
      write_text(dir / "curves.csv", cmp.curves_csv());
      std::fputs(cmp.table_csv().c_str(), stdout);
    } else if (ablate->parsed()) {
      const RunConfig config = resolve(common);
      std::vector<std::size_t> list;
      std::stringstream ss(sizes);
      for (std::string n; std::getline(ss, n, ',');) {
        std::size_t v = 0;
        const auto res = std::from_chars(n.data(), n.data() + n.size(), v);
        if (n.empty() || res.ec != std::errc{} || res.ptr != n.data() + n.size()) {
          throw Error(ErrorCode::invalid_argument, "bad subset size '" + n + "'");
        }
        list.push_back(v);
      }
      const auto rows = ablate_adapters(config, list, seed_range(seeds));
      const std::string csv = ablation_csv(rows);
      write_text(fs::path(config.output_dir) / "ablation.csv", csv);
      std::fputs(csv.c_str(), stdout);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
