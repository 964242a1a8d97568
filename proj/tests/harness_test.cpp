// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "metatransfer/error.hpp"
#include "metatransfer/harness.hpp"

using namespace metatransfer;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.suite.relatedness = {1.0, 0.0, 0.5};
  c.suite.noise = {0.0, 0.0, 0.2};
  c.suite.candidates = {2, 3, 4};
  c.suite.sizes = {100, 200, 300};
  c.suite.language_magnitudes = {0.0, 0.4, 0.8};
  c.suite.dev_size = 40;
  c.suite.test_size = 40;
  c.suite.probe_size = 30;
  c.model.hidden = 8;
  c.model.adapter_dim = 2;
  c.meta.max_steps = 30;
  c.meta.eval_interval = 10;
  c.meta.adapt_steps = 6;
  c.meta.adapt_eval_interval = 3;
  c.sampler.strategy = Strategy::rl;
  c.sampler.hidden = 6;
  c.train_seed = 17;
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io_error;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("metatransfer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config: defaults round trip through the text form") {
  const RunConfig defaults;
  const std::string text = format_run_config(defaults);
  CHECK(text.rfind("format_version=1\n", 0) == 0);
  CHECK(parse_run_config(text) == defaults);
  CHECK(parse_run_config("") == defaults);
  const RunConfig custom = small_config();
  CHECK(parse_run_config(format_run_config(custom)) == custom);
  CHECK(format_run_config(parse_run_config(format_run_config(custom))) == format_run_config(custom));
}

TEST_CASE("config: every key reads back what was written") {
  RunConfig c;
  for (const auto& key : config_keys()) {
    const std::string v = get_config_value(c, key);
    set_config_value(c, key, v);
    CHECK(get_config_value(c, key) == v);
  }
  CHECK(c == RunConfig{});
  apply_override(c, "sampler.epsilon=0.25");
  apply_override(c, " meta.batch_size = 7 ");
  apply_override(c, "suite.relatedness=1,0.5");
  apply_override(c, "suite.feature_dim=8");
  CHECK(c.sampler.epsilon == 0.25);
  CHECK(c.meta.batch_size == 7);
  CHECK(c.suite.relatedness == std::vector<double>{1.0, 0.5});
  CHECK(c.model.feature_dim == 8);
}

TEST_CASE("config: unknown keys and bad values are errors naming the key") {
  try {
    parse_run_config("sampler.epsilom=0.1\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_config);
    CHECK(std::string(e.what()).find("sampler.epsilom") != std::string::npos);
  }
  try {
    parse_run_config("meta.batch_size=twelve\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("meta.batch_size") != std::string::npos);
  }
  RunConfig c;
  CHECK(code_of([&] { apply_override(c, "sampler.strategy=GREEDY"); }) == ErrorCode::invalid_config);
  CHECK(code_of([&] { apply_override(c, "noequals"); }) == ErrorCode::invalid_config);
  CHECK(code_of([] { parse_run_config("a.b=1\na.b=2\n"); }) == ErrorCode::invalid_config);
  CHECK(code_of([] { parse_run_config("format_version=9\n"); }) == ErrorCode::version_mismatch);
  CHECK(code_of([] { parse_run_config("sampler.epsilon=1.5\n"); }) == ErrorCode::invalid_config);
}

TEST_CASE("suite document round trips and detects tampering") {
  const Suite suite = build_suite(small_config().suite);
  const std::string doc = suite_to_json(suite);
  CHECK(doc.find("\"format_version\": 1") != std::string::npos);
  CHECK(suite_from_json(doc) == suite);
  CHECK(suite_to_json(suite_from_json(doc)) == doc);
  std::string tampered = doc;
  const auto pos = tampered.find("\"suite.seed\": \"0\"");
  REQUIRE(pos != std::string::npos);
  tampered.replace(pos, 17, "\"suite.seed\": \"1\"");
  CHECK(code_of([&] { suite_from_json(tampered); }) == ErrorCode::corrupt_file);
  CHECK(code_of([&] { suite_from_json(doc.substr(0, doc.size() / 2)); }) == ErrorCode::corrupt_file);
}

TEST_CASE("checkpoint: save, load, save is byte-identical") {
  const RunConfig config = small_config();
  const Suite suite = build_suite(config.suite);
  MetricsLog log(suite.num_sources());
  const Checkpoint cp = train_run(config, suite, log);
  CHECK(cp.state.step == 30);
  const auto dir = temp_dir("checkpoint");
  save_checkpoint(cp, dir / "a.json");
  const Checkpoint back = load_checkpoint(dir / "a.json");
  CHECK(back == cp);
  save_checkpoint(back, dir / "b.json");
  std::ifstream a(dir / "a.json"), b(dir / "b.json");
  const std::string ta((std::istreambuf_iterator<char>(a)), {});
  const std::string tb((std::istreambuf_iterator<char>(b)), {});
  CHECK(ta == tb);
  CHECK(ta.rfind("{\n  \"format_version\": 1", 0) == 0);
}

TEST_CASE("checkpoint: truncated, malformed and wrong-version files are refused") {
  const RunConfig config = small_config();
  const Suite suite = build_suite(config.suite);
  MetricsLog log(suite.num_sources());
  const std::string text = checkpoint_to_json(train_run(config, suite, log, std::nullopt, 3));
  CHECK(code_of([&] { checkpoint_from_json(text.substr(0, text.size() - 40)); }) ==
        ErrorCode::corrupt_file);
  CHECK(code_of([&] { checkpoint_from_json(""); }) == ErrorCode::corrupt_file);
  std::string versioned = text;
  versioned.replace(versioned.find("\"format_version\": 1"), 19, "\"format_version\": 2");
  CHECK(code_of([&] { checkpoint_from_json(versioned); }) == ErrorCode::version_mismatch);
  std::string bad_hex = text;
  const auto at = bad_hex.find("\"best_dev\": \"") + 13;
  bad_hex[at] = 'z';
  CHECK(code_of([&] { checkpoint_from_json(bad_hex); }) == ErrorCode::corrupt_file);
  std::string bad_shape = text;
  const auto shape = bad_shape.find("\"shape\": [");
  bad_shape.insert(shape + 10, "9");
  CHECK(code_of([&] { checkpoint_from_json(bad_shape); }) == ErrorCode::corrupt_file);
  CHECK(code_of([] { load_checkpoint("/nonexistent/dir/cp.json"); }) == ErrorCode::io_error);
}

TEST_CASE("resume from a saved checkpoint equals the uninterrupted run") {
  for (Strategy s : {Strategy::rl, Strategy::first, Strategy::uniform}) {
    RunConfig config = small_config();
    config.sampler.strategy = s;
    const Suite suite = build_suite(config.suite);
    MetricsLog full_log(suite.num_sources());
    const Checkpoint full = train_run(config, suite, full_log);

    MetricsLog part_log(suite.num_sources());
    const Checkpoint half = train_run(config, suite, part_log, std::nullopt, 13);
    CHECK(half.state.step == 13);
    const Checkpoint reloaded = checkpoint_from_json(checkpoint_to_json(half));
    MetricsLog resumed_log = MetricsLog::parse_csv(part_log.to_csv());
    const Checkpoint resumed = train_run(config, suite, resumed_log, reloaded);
    CHECK(resumed == full);
    CHECK(resumed_log.to_csv() == full_log.to_csv());
    CHECK(resumed_log.records()[13].step == 13);
  }
  RunConfig other = small_config();
  const Suite suite = build_suite(other.suite);
  MetricsLog log(suite.num_sources());
  const Checkpoint cp = train_run(other, suite, log, std::nullopt, 2);
  other.meta.beta_ctml *= 2;
  CHECK(code_of([&] { train_run(other, suite, log, cp); }) == ErrorCode::invalid_config);
}

TEST_CASE("run: one results row per language and bit-identical reruns") {
  RunConfig config = small_config();
  const RunResult a = run(config);
  const RunResult b = run(config);
  REQUIRE(a.results.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(a.results[l].language == l);
    CHECK(a.results[l].magnitude == config.suite.language_magnitudes[l]);
    CHECK(a.results[l].adapt == AdaptMode::clml);
  }
  CHECK(a.log.to_csv() == b.log.to_csv());
  CHECK(checkpoint_to_json(a.checkpoint) == checkpoint_to_json(b.checkpoint));
  CHECK(a.results == b.results);
  CHECK(a.log.records().size() == 30 + 3 * 6);

  config.adapt_mode = AdaptMode::none;
  config.sampler.strategy = Strategy::uniform;
  const RunResult zero = run(config);
  CHECK(zero.results.size() == 3);
  CHECK(zero.log.records().size() == 30);

  const auto dir = temp_dir("run");
  write_run(a, dir);
  for (const char* f : {"config.txt", "metrics.csv", "checkpoint.json", "results.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(load_run_config(dir / "config.txt") == small_config());
}

TEST_CASE("compare_samplers: table shape and shared suites") {
  RunConfig config = small_config();
  const std::vector<Strategy> one{Strategy::uniform};
  const std::vector<std::uint64_t> seed{0};
  const SamplerComparison single = compare_samplers(config, one, seed);
  REQUIRE(single.summary.size() == 1);
  CHECK(single.summary[0].runs == 1);
  CHECK(single.summary[0].std_test == 0.0);
  const std::string table = single.table_csv();
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);

  const std::vector<Strategy> three{Strategy::first, Strategy::last, Strategy::sample};
  const std::vector<std::uint64_t> seeds{0, 1};
  const SamplerComparison cmp = compare_samplers(config, three, seeds);
  CHECK(cmp.summary.size() == 3);
  CHECK(cmp.runs.size() == 6);
  for (const auto& r : cmp.runs) CHECK(r.dev_curve.size() == 3);
  // The same (config, suite, strategy, seed) reproduces one cell exactly.
  const RunConfig c1 = seeded(config, 1);
  const StrategyRun again = run_strategy(c1, build_suite(c1.suite), Strategy::last, 1);
  CHECK(again.test_acc == cmp.runs[3].test_acc);
  CHECK(again.dev_curve == cmp.runs[3].dev_curve);
  CHECK(cmp.curves_csv().rfind("# format_version=1\nstrategy,seed,step,dev_acc\n", 0) == 0);
}

TEST_CASE("ablate_adapters: subsets are deterministic and size 1 is single-task training") {
  RunConfig config = small_config();
  config.sampler.strategy = Strategy::uniform;
  CHECK(ablation_subsets(config, 1).size() == 3);
  CHECK(ablation_subsets(config, 3) == std::vector<std::vector<std::size_t>>{{0, 1, 2}});
  const auto two = ablation_subsets(config, 2);
  CHECK(two == ablation_subsets(config, 2));
  REQUIRE(two.size() == 1);
  CHECK(two[0].size() == 2);
  CHECK(code_of([&] { ablation_subsets(config, 4); }) == ErrorCode::invalid_argument);

  const std::vector<std::size_t> sizes{1, 3};
  const std::vector<std::uint64_t> seeds{0};
  const auto rows = ablate_adapters(config, sizes, seeds);
  REQUIRE(rows.size() == 4);
  // Row 1 trains on dataset 1 alone; redo it by hand.
  const Suite suite = build_suite(config.suite);
  const std::vector<std::size_t> only{1};
  const Suite sub = restrict_sources(suite, only);
  CHECK(sub.num_sources() == 1);
  CHECK(sub.sources[0] == suite.sources[1]);
  MetricsLog log(1);
  const ModelParams m = train(TrainMode::ctml, sub, config.meta, config.sampler, config.train_seed,
                              initial_model(config.model, config.train_seed), log);
  CHECK(rows[1].test_acc[0] == evaluate(m, suite.test[0]));
  CHECK(ablation_csv(rows).rfind("# format_version=1\nsize,subset,runs", 0) == 0);
}
