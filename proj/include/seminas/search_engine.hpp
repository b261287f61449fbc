#pragma once

// Search controllers over a ground-truth evaluator: the semi-supervised
// gradient-ascent loop, its supervised-only special case, random search,
// regularized evolution and evolution filtered by the learned predictor.
//
// Every controller deduplicates by canonical key before querying, so the
// ledger count equals the number of distinct architectures evaluated.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seminas/benchmark.hpp"
#include "seminas/controller.hpp"
#include "seminas/rng.hpp"
#include "seminas/search_space.hpp"

namespace seminas {

struct SearchBudget {
  std::size_t n_initial = 100;          // N
  std::size_t m_unlabeled = 2000;       // M
  std::size_t k_seeds = 100;            // K
  std::size_t iterations = 2;           // L
  double step_size = 1.0;               // eta
  std::size_t new_per_iteration = 100;  // architectures evaluated per iteration
  std::size_t steps_per_eval = 0;       // T, informational only

  std::size_t total() const { return n_initial + new_per_iteration * iterations; }
  void check() const;  // throws ConfigError
};

struct EvaluatedArch {
  CellGraph arch;
  std::string hash;
  double accuracy = 0.0;       // validation split, the only value search sees
  double test_accuracy = 0.0;  // reporting only
  std::size_t iteration = 0;
  std::string source;          // which proposal rule produced the architecture
};

struct SearchHistory {
  std::string controller;
  std::vector<EvaluatedArch> evaluated;
  QueryLedger ledger;

  // Record with the highest validation accuracy (first on ties). Throws
  // UsageError when empty.
  const EvaluatedArch& best() const;
  bool empty() const { return evaluated.empty(); }
};

// Thrown when the evaluator cannot supply enough novel architectures; carries
// everything evaluated so far.
class BudgetError : public std::runtime_error {
 public:
  BudgetError(const std::string& what, SearchHistory partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const SearchHistory& partial() const { return partial_; }

 private:
  SearchHistory partial_;
};

struct AscentResult {
  std::vector<double> embedding;
  double before = 0.0;  // predict(e)
  double after = 0.0;   // predict(e')
  std::size_t halvings = 0;
  bool improved = true;  // false when even the smallest step lowered the prediction
};

// e' = e + eta * d predict / d e. When the step lowers the prediction the
// step is halved up to `max_halvings` times; if it never recovers, e is
// returned unchanged with improved = false.
AscentResult gradient_ascent_step(const ControllerModel& model, std::span<const double> e, double eta,
                                  std::size_t max_halvings = 10);

struct SemiNasOptions {
  std::size_t ascent_steps = 1;       // eta steps per candidate before decoding
  std::vector<double> multipliers = {1.0, 2.0, 4.0, 8.0};  // retries when decodes repeat
  std::size_t max_halvings = 10;
};

SearchHistory run_seminas(const Evaluator& evaluator, const SearchBudget& budget, const ControllerConfig& config,
                          Rng& rng, const SemiNasOptions& options = {});

// run_seminas with no unlabeled architectures and no up-sampling.
SearchHistory run_nao(const Evaluator& evaluator, SearchBudget budget, ControllerConfig config, Rng& rng,
                      const SemiNasOptions& options = {});

SearchHistory run_random(const Evaluator& evaluator, std::size_t queries, Rng& rng);

struct EvolutionOptions {
  std::size_t population_size = 100;
  std::size_t sample_size = 10;
};

SearchHistory run_re(const Evaluator& evaluator, std::size_t queries, const EvolutionOptions& options, Rng& rng);

struct SemiEvolutionOptions {
  EvolutionOptions evolution;
  std::size_t candidates = 16;      // C mutations scored per cycle
  std::size_t retrain_every = 200;  // R ground-truth evaluations between retrainings
  std::size_t m_unlabeled = 1000;   // unlabeled architectures per retraining
  // Supervised epochs of every retraining after the first; the model is warm
  // by then. The first training uses config.epochs_supervised.
  std::size_t retrain_epochs = 10;
};

SearchHistory run_semi_re(const Evaluator& evaluator, std::size_t queries, const SemiEvolutionOptions& options,
                          const ControllerConfig& config, Rng& rng);

// One JSON object per evaluated architecture:
// {"iter","hash","accuracy","test_accuracy","source","cumulative_best","ledger","arch"}
void write_history_jsonl(const SearchHistory& history, const SearchSpaceSpec& space, std::ostream& out);
SearchHistory read_history_jsonl(std::istream& in, const SearchSpaceSpec& space);

struct RunStats {
  double best_valid_accuracy = 0.0;
  double best_test_accuracy = 0.0;  // test accuracy of the architecture picked by validation
  std::optional<double> test_regret;
  std::optional<std::size_t> rank;
  std::size_t queries = 0;
};

RunStats report_stats(const SearchHistory& history, const Evaluator& backend);

}  // namespace seminas
