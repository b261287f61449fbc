#pragma once

// Experiment configuration, presets, multi-seed runs and sweeps.
//
// Config files are flat `key = value` text; `#` starts a comment. A `preset`
// key (or an explicit preset argument) fills the defaults first and every
// other key overrides it. Output layout of one experiment:
//   <output_dir>/history_seed<k>.jsonl   one line per evaluated architecture
//   <output_dir>/summary.json            resolved config, per-seed rows, aggregates
//   <output_dir>/summary.tsv             the same rows as a flat table

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seminas/benchmark.hpp"
#include "seminas/controller.hpp"
#include "seminas/search_engine.hpp"

namespace seminas {

enum class ControllerKind { kSemiNas, kNao, kRandom, kRe, kSemiRe };

std::string controller_name(ControllerKind kind);

struct ExperimentConfig {
  std::string preset;  // informational once applied
  ControllerKind controller = ControllerKind::kSemiNas;

  SearchSpaceSpec space;
  SearchBudget budget;
  SemiNasOptions seminas;
  std::size_t queries = 2000;  // random / re / semi_re
  SemiEvolutionOptions evolution;
  ControllerConfig model;

  std::string backend;  // "synthetic" or "tabular"; required
  std::uint64_t backend_seed = 0;
  double oracle_scale = 0.005;
  double oracle_noise = 0.002;
  double oracle_base = 0.9;
  std::size_t oracle_interactions = 3;
  std::filesystem::path backend_path;

  std::vector<std::uint64_t> seeds;  // default 0..19
  std::filesystem::path output_dir = "results";

  // Ground-truth queries one run makes.
  std::size_t expected_queries() const;
  void check() const;  // throws ConfigError

  // Resolved configuration as ordered key/value pairs (every field).
  std::vector<std::pair<std::string, std::string>> echo() const;
};

std::vector<std::string> preset_names();
// Throws ConfigError for an unknown name.
ExperimentConfig preset_config(const std::string& name);

// Applies one key. Throws ConfigError for unknown keys or bad values.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

// Parses a config file body. Keys are applied after `preset` (if present),
// then the `key=value` overrides in order. SEMINAS_SEED_OFFSET, when set, is
// added to every seed.
ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config",
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
void apply_seed_offset(ExperimentConfig& config);

std::unique_ptr<Evaluator> make_evaluator(const ExperimentConfig& config);

// One seed of the configured controller.
SearchHistory run_one(const ExperimentConfig& config, const Evaluator& evaluator, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunStats stats;
};

struct ExperimentSummary {
  std::vector<SeedOutcome> seeds;
  std::size_t failed = 0;
  double mean_best_test = 0.0;
  double sd_best_test = 0.0;
  double mean_best_valid = 0.0;
  std::optional<double> mean_regret;
  std::optional<double> mean_rank;
};

// Aggregates over the successful seeds.
ExperimentSummary summarize(std::vector<SeedOutcome> outcomes);

// Runs every seed (up to `jobs` at a time), writes history files and the
// summary files. Seed failures are recorded, not thrown.
ExperimentSummary run_experiment(const ExperimentConfig& config, std::size_t jobs = 1,
                                 std::ostream* progress = nullptr);

void write_summary_json(const ExperimentConfig& config, const ExperimentSummary& s, std::ostream& out);
void write_summary_tsv(const ExperimentConfig& config, const ExperimentSummary& s, std::ostream& out);

enum class SweepAxis { kMUnlabeled, kUpsampleRatio };
SweepAxis parse_sweep_axis(const std::string& name);  // throws ConfigError
std::string sweep_axis_name(SweepAxis axis);

struct SweepRow {
  std::string value;
  ExperimentSummary summary;
};

// One experiment per value in <output_dir>/<axis>_<value>/, same seeds for
// every value, plus sweep.tsv and sweep.json in output_dir.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis,
                                const std::vector<std::string>& values, std::size_t jobs = 1,
                                std::ostream* progress = nullptr);

}  // namespace seminas
