// Command-line front end: search runs and sweeps, tabular benchmark
// utilities and the diagonal focus rate.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "seminas/benchmark.hpp"
#include "seminas/dfr.hpp"
#include "seminas/errors.hpp"
#include "seminas/experiment.hpp"

using namespace seminas;

namespace {

void print_summary(const ExperimentConfig& config, const ExperimentSummary& s) {
  std::cout << controller_name(config.controller) << ": " << s.seeds.size() - s.failed << " seeds ok, " << s.failed
            << " failed; mean best test accuracy " << s.mean_best_test << " (sd " << s.sd_best_test << ")";
  if (s.mean_regret) std::cout << ", mean regret " << *s.mean_regret;
  if (s.mean_rank) std::cout << ", mean rank " << *s.mean_rank;
  std::cout << "\nwrote " << (config.output_dir / "summary.json").string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised neural architecture search over cell DAGs"};
  app.require_subcommand(1);

  auto* search = app.add_subcommand("search", "architecture search experiments");
  search->require_subcommand(1);

  std::string config_path;
  std::size_t jobs = 1;
  std::vector<std::string> overrides;
  bool quiet = false;

  auto* run = search->add_subcommand("run", "run one experiment over all configured seeds");
  run->add_option("--config", config_path, "flat key = value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--jobs", jobs, "seeds run in parallel")->check(CLI::PositiveNumber);
  run->add_option("--set", overrides, "extra key=value entries applied after the file");
  run->add_flag("--quiet", quiet, "no per-seed progress");

  std::string axis;
  std::string values;
  auto* sweep = search->add_subcommand("sweep", "one experiment per value of an axis, paired seeds");
  sweep->add_option("--config", config_path, "flat key = value config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis, "m_unlabeled or upsample_ratio")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--jobs", jobs, "seeds run in parallel")->check(CLI::PositiveNumber);
  sweep->add_option("--set", overrides, "extra key=value entries applied after the file");
  sweep->add_flag("--quiet", quiet, "no per-seed progress");

  auto* presets = search->add_subcommand("presets", "list preset names");

  auto* bench = app.add_subcommand("bench", "tabular benchmark files");
  bench->require_subcommand(1);
  std::string csv_in, csv_out;
  std::size_t max_nodes = 7;
  std::uint64_t oracle_seed = 0;
  auto* convert = bench->add_subcommand("convert", "rewrite a CSV export in canonical form");
  convert->add_option("input", csv_in, "CSV file")->required()->check(CLI::ExistingFile);
  convert->add_option("output", csv_out, "output CSV")->required();
  convert->add_option("--max-nodes", max_nodes, "nodes per cell");
  auto* validate_cmd = bench->add_subcommand("validate", "check a CSV file and report its size");
  validate_cmd->add_option("input", csv_in, "CSV file")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--max-nodes", max_nodes, "nodes per cell");
  auto* tabulate_cmd = bench->add_subcommand("tabulate", "write every cell of a small space scored by the synthetic oracle");
  tabulate_cmd->add_option("output", csv_out, "output CSV")->required();
  tabulate_cmd->add_option("--max-nodes", max_nodes, "nodes per cell (at most 5)")->check(CLI::Range(2, 5));
  tabulate_cmd->add_option("--seed", oracle_seed, "oracle seed");

  auto* dfr = app.add_subcommand("dfr", "diagonal focus rate of attention maps");
  dfr->require_subcommand(1);
  std::size_t band = 0;
  std::vector<std::string> map_files;
  auto* compute = dfr->add_subcommand("compute", "DFR per file and the mean");
  compute->add_option("--band", band, "band half-width b")->required();
  compute->add_option("files", map_files, "attention map files (`O I` header, O rows of I reals)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig config = load_config(config_path, overrides);
      const auto s = run_experiment(config, jobs, quiet ? nullptr : &std::cerr);
      print_summary(config, s);
      return s.failed == 0 ? 0 : 1;
    }
    if (sweep->parsed()) {
      const ExperimentConfig config = load_config(config_path, overrides);
      std::vector<std::string> list;
      std::stringstream vs(values);
      for (std::string v; std::getline(vs, v, ',');)
        if (!v.empty()) list.push_back(v);
      const auto rows = run_sweep(config, parse_sweep_axis(axis), list, jobs, quiet ? nullptr : &std::cerr);
      std::size_t failed = 0;
      for (const auto& r : rows) {
        std::cout << axis << " = " << r.value << ": mean best test accuracy " << r.summary.mean_best_test << " (sd "
                  << r.summary.sd_best_test << ")\n";
        failed += r.summary.failed;
      }
      std::cout << "wrote " << (config.output_dir / "sweep.tsv").string() << '\n';
      return failed == 0 ? 0 : 1;
    }
    if (presets->parsed()) {
      for (const auto& p : preset_names()) {
        const auto c = preset_config(p);
        std::cout << p << "\t" << controller_name(c.controller) << "\t" << c.expected_queries() << " queries\n";
      }
      return 0;
    }
    if (convert->parsed() || validate_cmd->parsed()) {
      SearchSpaceSpec space;
      space.max_nodes = max_nodes;
      const auto table = load_tabular(csv_in, space);
      if (convert->parsed()) {
        save_tabular(table, csv_out);
        std::cout << "wrote " << table.size() << " entries to " << csv_out << '\n';
      } else {
        std::cout << csv_in << ": " << table.size() << " entries";
        if (const auto opt = table.optimum_test_accuracy()) std::cout << ", optimum test accuracy " << *opt;
        std::cout << '\n';
      }
      return 0;
    }
    if (tabulate_cmd->parsed()) {
      SearchSpaceSpec space;
      space.max_nodes = max_nodes;
      const SyntheticOracle oracle(space, SyntheticOracleConfig::generate(space, oracle_seed));
      const auto table = tabulate(oracle);
      save_tabular(table, csv_out);
      std::cout << "wrote " << table.size() << " entries to " << csv_out << '\n';
      return 0;
    }
    if (compute->parsed()) {
      std::vector<AttentionMap> maps;
      for (const auto& f : map_files) maps.push_back(load_attention_map(f));
      const auto r = batch_dfr(maps, band);
      for (std::size_t i = 0; i < maps.size(); ++i) std::cout << map_files[i] << '\t' << r.per_map[i] << '\n';
      std::cout << "mean\t" << r.mean << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
