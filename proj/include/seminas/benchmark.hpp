#pragma once

// Ground-truth evaluators and query accounting.
//
// Two backends answer "what is the accuracy of this cell": a seeded synthetic
// oracle (a sparse additive model over ops, edges and op pairs) and a tabular
// file of precomputed accuracies. Controllers go through query(), which
// counts every validation-split lookup on a QueryLedger.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seminas/search_space.hpp"

namespace seminas {

enum class Split { kValid, kTest };

struct QueryRecord {
  std::string hash;
  double accuracy = 0.0;
  std::uint64_t sequence = 0;  // logical timestamp: position in the log
};

// Thread-safe append-only log of ground-truth queries. Only validation-split
// queries are counted; test-split lookups are tallied on their own.
class QueryLedger {
 public:
  QueryLedger() = default;
  QueryLedger(const QueryLedger& other);
  QueryLedger& operator=(const QueryLedger& other);

  void record(std::string hash, double accuracy);
  void record_test();
  std::size_t count() const;
  std::size_t test_count() const;
  std::vector<QueryRecord> log() const;

 private:
  mutable std::mutex mu_;
  std::vector<QueryRecord> log_;
  std::size_t test_count_ = 0;
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;

  virtual const SearchSpaceSpec& space() const = 0;
  // Pure lookup. Throws LookupError for an architecture the backend lacks.
  virtual double accuracy(const CellGraph& g, Split split) const = 0;
  // Best test accuracy over the whole space when known.
  virtual std::optional<double> optimum_test_accuracy() const = 0;
  // Test accuracies of every architecture in the space, sorted descending;
  // empty when the space cannot be enumerated.
  virtual const std::vector<double>& sorted_test_accuracies() const = 0;
  virtual std::string describe() const = 0;
};

// Validation queries increment the ledger exactly once per call; test queries
// only bump its test tally.
double query(const Evaluator& backend, const CellGraph& g, QueryLedger& ledger, Split split = Split::kValid);

// ---------------------------------------------------------------------------
// Synthetic oracle

struct InteractionTerm {
  int op_a = 0;  // searchable op id of an edge source
  int op_b = 0;  // searchable op id of the edge target
  double weight = 0.0;
};

struct SyntheticOracleConfig {
  std::uint64_t seed = 0;
  double base = 0.9;
  double noise_sd = 0.002;
  // op_weights[band * num_ops + op]; band = min(depth, 3) - 1 where depth is
  // the longest path length from INPUT to the node.
  std::vector<double> op_weights;
  // edge_weights[i * max_nodes + j] over canonical node positions; an edge
  // into OUTPUT uses column max_nodes - 1 whatever the graph size.
  std::vector<double> edge_weights;
  std::vector<InteractionTerm> interaction_pairs;

  static constexpr std::size_t kBands = 3;

  // Weights drawn from `seed`: op and edge weights ~ N(0, scale^2), plus
  // `interactions` op-pair terms ~ N(0, scale^2).
  static SyntheticOracleConfig generate(const SearchSpaceSpec& space, std::uint64_t seed, double scale = 0.005,
                                        double noise_sd = 0.002, double base = 0.9, std::size_t interactions = 3);
  // All weights zero.
  static SyntheticOracleConfig constant(const SearchSpaceSpec& space, double base);
};

struct SyntheticAccuracy {
  double valid = 0.0;
  double test = 0.0;
};

// Noise-free score of a graph (base plus all active terms, unclipped).
double synthetic_score(const SyntheticOracleConfig& config, const SearchSpaceSpec& space, const CellGraph& g);

SyntheticAccuracy synthetic_accuracy(const SyntheticOracleConfig& config, const SearchSpaceSpec& space,
                                     const CellGraph& g);

class SyntheticOracle : public Evaluator {
 public:
  SyntheticOracle(SearchSpaceSpec space, SyntheticOracleConfig config);

  const SearchSpaceSpec& space() const override { return space_; }
  double accuracy(const CellGraph& g, Split split) const override;
  std::optional<double> optimum_test_accuracy() const override;
  const std::vector<double>& sorted_test_accuracies() const override;
  std::string describe() const override;

  const SyntheticOracleConfig& config() const { return config_; }
  // Enumerable when max_nodes <= 5.
  bool enumerable() const { return space_.max_nodes <= 5; }

 private:
  SearchSpaceSpec space_;
  SyntheticOracleConfig config_;
  mutable std::once_flag enumerated_;
  mutable std::vector<double> sorted_test_;
};

// ---------------------------------------------------------------------------
// Tabular backend
//
// CSV, UTF-8, LF line endings:
//   ops,adj,valid_acc_mean,test_acc_mean,repeats
//   "input,conv3x3,output",001001000,0.91,0.905,3
// Optional sidecar `<csv>.meta.json` holding {"optimum_test_accuracy": x}.

struct TabularEntry {
  CellGraph arch;  // canonical
  double valid_accuracy = 0.0;
  double test_accuracy = 0.0;
  int repeats = 0;
};

class TabularBenchmark : public Evaluator {
 public:
  TabularBenchmark(SearchSpaceSpec space, std::vector<TabularEntry> entries,
                   std::optional<double> optimum_test = std::nullopt);

  const SearchSpaceSpec& space() const override { return space_; }
  double accuracy(const CellGraph& g, Split split) const override;
  std::optional<double> optimum_test_accuracy() const override;
  const std::vector<double>& sorted_test_accuracies() const override { return sorted_test_; }
  std::string describe() const override;

  bool contains(const CellGraph& g) const;
  const std::vector<TabularEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  SearchSpaceSpec space_;
  std::vector<TabularEntry> entries_;
  std::unordered_map<ArchKey, std::size_t> index_;
  std::optional<double> optimum_test_;
  std::vector<double> sorted_test_;
};

inline constexpr const char* kTabularHeader = "ops,adj,valid_acc_mean,test_acc_mean,repeats";

// Throws LoadError listing every malformed row with its line number.
TabularBenchmark parse_tabular(std::istream& in, const SearchSpaceSpec& space,
                               std::optional<double> optimum_test = std::nullopt);
TabularBenchmark load_tabular(const std::filesystem::path& path, const SearchSpaceSpec& space);
void dump_tabular(const TabularBenchmark& bench, const SearchSpaceSpec& space, std::ostream& out);
void save_tabular(const TabularBenchmark& bench, const std::filesystem::path& path);

std::filesystem::path metadata_path(const std::filesystem::path& csv);

// Every architecture of an enumerable space scored by the synthetic oracle.
TabularBenchmark tabulate(const SyntheticOracle& oracle);

// 1-based rank of `test_accuracy` among the sorted accuracies (1 + number of
// strictly better entries). nullopt when the list is empty.
std::optional<std::size_t> rank_of(double test_accuracy, const std::vector<double>& sorted_desc);

}  // namespace seminas
