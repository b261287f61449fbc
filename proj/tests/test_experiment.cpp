#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "seminas/errors.hpp"
#include "seminas/experiment.hpp"
#include "seminas/stats.hpp"

using namespace seminas;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text, const std::vector<std::string>& overrides = {}) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg", overrides);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "seminas_test_experiment" / name;
  fs::remove_all(p);
  return p;
}

// A seconds-long SemiNAS run on the 4-node space.
ExperimentConfig tiny(const fs::path& out) {
  return parse(
      "preset = seminas-300\n"
      "backend = synthetic\n"
      "max_nodes = 4\n"
      "n_initial = 8\n"
      "k_seeds = 4\n"
      "new_per_iteration = 4\n"
      "iterations = 2\n"
      "m_unlabeled = 20\n"
      "upsample_ratio = 2\n"
      "epochs_supervised = 15\n"
      "epochs_semi = 2\n"
      "seeds = 0-2\n"
      "output_dir = " +
      out.string() + "\n");
}

}  // namespace

TEST_CASE("presets") {
  const auto names = preset_names();
  CHECK(names.size() == 8);
  for (const auto& n : names) CHECK_NOTHROW(preset_config(n));
  CHECK(preset_config("seminas-300").expected_queries() == 300);
  CHECK(preset_config("seminas-2000").expected_queries() == 2000);
  CHECK(preset_config("nao-300").expected_queries() == 300);
  CHECK(preset_config("nao-300").budget.m_unlabeled == 0);
  CHECK(preset_config("seminas-300").model.upsample_ratio == 100);
  CHECK(preset_config("seminas-2000").model.upsample_ratio == 10);
  CHECK(preset_config("re-2000").expected_queries() == 2000);
  CHECK(preset_config("seminas-300").seeds.size() == 20);
  CHECK_THROWS_AS(preset_config("seminas-301"), ConfigError);
}

TEST_CASE("config parsing") {
  SUBCASE("preset then keys then overrides") {
    const auto c = parse("# comment\npreset = nao-300\nbackend = synthetic  # trailing\nn_initial = 50\n",
                         {"n_initial=60", "seeds=3-5,9"});
    CHECK(c.controller == ControllerKind::kNao);
    CHECK(c.budget.n_initial == 60);
    CHECK(c.seeds == std::vector<std::uint64_t>{3, 4, 5, 9});
    CHECK(c.expected_queries() == 260);
  }
  SUBCASE("preset applies first wherever it appears") {
    const auto c = parse("m_unlabeled = 2000\npreset = seminas-300\nbackend = synthetic\n");
    CHECK(c.budget.m_unlabeled == 2000);
    CHECK(c.model.upsample_ratio == 100);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse("backend = synthetic\nlearning_rat = 1\n"), ConfigError);
    try {
      parse("backend = synthetic\n\nbogus = 1\n");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("test.cfg:3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse("backend = synthetic\nn_initial = 5\nn_initial = 6\n"), ConfigError);
    CHECK_THROWS_AS(parse("preset = seminas-300\n"), ConfigError);  // backend missing
    CHECK_THROWS_AS(parse("backend = synthetic\nno equals sign\n"), ConfigError);
    CHECK_THROWS_AS(parse("backend = synthetic\nn_initial = -3\n"), ConfigError);
    CHECK_THROWS_AS(parse("backend = synthetic\nwarm_start = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse("backend = synthetic\ncontroller = bandit\n"), ConfigError);
    CHECK_THROWS_AS(parse("backend = synthetic", {"nokey"}), ConfigError);
  }
  SUBCASE("echo round trip") {
    const auto c = parse("preset = seminas-2000\nbackend = synthetic\nlearning_rate = 0.005\nseeds = 1,2\n");
    std::string text;
    for (const auto& [k, v] : c.echo())
      if (k != "preset") text += k + " = " + v + "\n";
    const auto again = parse(text);
    CHECK(again.echo().size() == c.echo().size());
    for (std::size_t i = 1; i < c.echo().size(); ++i) CHECK(again.echo()[i] == c.echo()[i]);
  }
}

TEST_CASE("seed offset from the environment") {
  setenv("SEMINAS_SEED_OFFSET", "100", 1);
  const auto c = parse("backend = synthetic\nseeds = 0-1\n");
  unsetenv("SEMINAS_SEED_OFFSET");
  CHECK(c.seeds == std::vector<std::uint64_t>{100, 101});
}

TEST_CASE("experiment files") {
  const fs::path out = scratch("run");
  const auto config = tiny(out);
  const auto s = run_experiment(config);
  REQUIRE(s.failed == 0);
  REQUIRE(s.seeds.size() == 3);

  // The aggregate is recomputed from the history files.
  std::vector<double> best;
  for (auto seed : config.seeds) {
    std::ifstream in(out / ("history_seed" + std::to_string(seed) + ".jsonl"));
    const auto h = read_history_jsonl(in, config.space);
    CHECK(h.evaluated.size() == 16);
    best.push_back(h.best().test_accuracy);
  }
  CHECK(s.mean_best_test == doctest::Approx(stats::mean(best)).epsilon(1e-15));
  CHECK(s.mean_rank.has_value());  // the 4-node space is enumerable

  const auto j = nlohmann::json::parse(slurp(out / "summary.json"));
  CHECK(j.at("config").at("max_nodes") == "4");
  CHECK(j.at("seeds").size() == 3);
  CHECK(j.at("aggregate").at("mean_best_test_accuracy").get<double>() == s.mean_best_test);
  const std::string tsv = slurp(out / "summary.tsv");
  CHECK(tsv.find("# controller = seminas") != std::string::npos);
  CHECK(tsv.find("\nmean\tok\t") != std::string::npos);

  SUBCASE("reruns are byte-identical, in parallel too") {
    std::vector<std::string> before;
    for (const auto& f : {"history_seed0.jsonl", "history_seed2.jsonl", "summary.json", "summary.tsv"})
      before.push_back(slurp(out / f));
    run_experiment(config, 3);
    std::size_t i = 0;
    for (const auto& f : {"history_seed0.jsonl", "history_seed2.jsonl", "summary.json", "summary.tsv"})
      CHECK(slurp(out / f) == before[i++]);
  }
}

TEST_CASE("sweep over M") {
  const fs::path out = scratch("sweep");
  auto config = tiny(out);
  config.seeds = {0, 1};
  const auto rows = run_sweep(config, SweepAxis::kMUnlabeled, {"0", "10", "20"});
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.summary.failed == 0);
    for (int seed = 0; seed < 2; ++seed)
      CHECK(fs::exists(out / ("m_unlabeled_" + r.value) / ("history_seed" + std::to_string(seed) + ".jsonl")));
  }
  const std::string tsv = slurp(out / "sweep.tsv");
  std::size_t data_rows = 0;
  std::istringstream lines(tsv);
  for (std::string line; std::getline(lines, line);)
    if (!line.empty() && line[0] != '#') ++data_rows;
  CHECK(data_rows == 4);  // header + 3 values

  // The M = 0 column is plain NAO.
  const fs::path nao_out = scratch("nao");
  auto nao = config;
  nao.controller = ControllerKind::kNao;
  nao.output_dir = nao_out;
  run_experiment(nao);
  for (int seed = 0; seed < 2; ++seed) {
    const std::string f = "history_seed" + std::to_string(seed) + ".jsonl";
    CHECK(slurp(nao_out / f) == slurp(out / "m_unlabeled_0" / f));
  }
  CHECK(rows[0].summary.mean_best_test == run_experiment(nao).mean_best_test);

  CHECK_THROWS_AS(parse_sweep_axis("epochs"), ConfigError);
  CHECK(sweep_axis_name(parse_sweep_axis("upsample_ratio")) == "upsample_ratio");
}

TEST_CASE("a run that cannot fill its budget is reported, not thrown") {
  const fs::path out = scratch("exhausted");
  auto config = parse(
      "preset = random-2000\nbackend = synthetic\nmax_nodes = 3\nqueries = 50\nseeds = 0\noutput_dir = " +
      out.string() + "\n");
  const auto s = run_experiment(config);
  CHECK(s.failed == 1);
  CHECK_FALSE(s.seeds[0].error.empty());
  // Partial history is still written.
  CHECK(fs::exists(out / "history_seed0.jsonl"));
}
