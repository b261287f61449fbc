#include "seminas/search_engine.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include "json.hpp"

#include "seminas/errors.hpp"

namespace seminas {

void SearchBudget::check() const {
  if (n_initial == 0) throw ConfigError("budget: n_initial must be at least 1");
  if (iterations > 0 && k_seeds == 0) throw ConfigError("budget: k_seeds must be at least 1");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("budget: step_size must be >= 0");
}

const EvaluatedArch& SearchHistory::best() const {
  if (evaluated.empty()) throw UsageError("history: no evaluated architectures");
  std::size_t best = 0;
  for (std::size_t i = 1; i < evaluated.size(); ++i)
    if (evaluated[i].accuracy > evaluated[best].accuracy) best = i;
  return evaluated[best];
}

namespace {

constexpr std::uint64_t kAuxStreamTag = 0x617578;  // "aux"

// Evaluation bookkeeping shared by every controller: canonicalizes, skips
// architectures already seen, asks the backend and records the result.
class Session {
 public:
  Session(const Evaluator& evaluator, std::string controller) : evaluator_(evaluator) {
    history_.controller = std::move(controller);
  }

  const SearchSpaceSpec& space() const { return evaluator_.space(); }
  std::size_t count() const { return history_.evaluated.size(); }
  SearchHistory& history() { return history_; }

  bool seen(const CellGraph& canonical) const { return seen_.count(canonical_key(canonical)) > 0; }

  // Returns false when g is invalid, already seen or unknown to the backend
  // (the latter costs no ledger query).
  bool try_evaluate(const CellGraph& g, std::size_t iteration, const char* source) {
    if (!is_valid(g, space())) return false;
    const CellGraph canon = canonicalize(g);
    if (!seen_.insert(canonical_key(canon)).second) return false;
    double valid = 0.0, test = 0.0;
    try {
      valid = query(evaluator_, canon, history_.ledger, Split::kValid);
    } catch (const LookupError&) {
      return false;
    }
    test = query(evaluator_, canon, history_.ledger, Split::kTest);
    history_.evaluated.push_back({canon, canonical_hash(canon, space()), valid, test, iteration, source});
    return true;
  }

  [[noreturn]] void exhausted(const std::string& what) {
    throw BudgetError(history_.controller + ": " + what + " after " + std::to_string(count()) + " evaluations",
                      history_);
  }

  // Evaluates fresh random architectures until `target` evaluations exist.
  void fill_random(std::size_t target, std::size_t iteration, Rng& rng) {
    std::size_t misses = 0;
    while (count() < target) {
      if (try_evaluate(random_architecture(space(), rng), iteration, "random")) {
        misses = 0;
      } else if (++misses > kMaxMisses) {
        exhausted("no novel random architecture found");
      }
    }
  }

  // A mutation of `parent` that has not been seen; falls back to random
  // architectures. Returns nullopt when both fail.
  std::optional<CellGraph> novel_child(const CellGraph& parent, Rng& rng) {
    for (std::size_t i = 0; i < kMutationTries; ++i) {
      CellGraph child = mutate(parent, space(), rng);
      if (!seen(child)) return child;
    }
    for (std::size_t i = 0; i < kMaxMisses; ++i) {
      CellGraph g = random_architecture(space(), rng);
      if (!seen(g)) return g;
    }
    return std::nullopt;
  }

  static constexpr std::size_t kMaxMisses = 100000;
  static constexpr std::size_t kMutationTries = 100;

 private:
  const Evaluator& evaluator_;
  SearchHistory history_;
  std::unordered_set<ArchKey> seen_;
};

std::vector<double> row(const grad::Matrix& m, Eigen::Index r) {
  return {m.row(r).data(), m.row(r).data() + m.cols()};
}

}  // namespace

AscentResult gradient_ascent_step(const ControllerModel& model, std::span<const double> e, double eta,
                                  std::size_t max_halvings) {
  if (!(eta >= 0.0)) throw UsageError("gradient_ascent_step: eta must be non-negative");
  AscentResult r;
  r.before = model.predict(e);
  const auto grad = model.predict_gradient(e);
  r.embedding.resize(e.size());
  double step = eta;
  for (;;) {
    for (std::size_t i = 0; i < e.size(); ++i) r.embedding[i] = e[i] + step * grad[i];
    r.after = model.predict(r.embedding);
    if (r.after >= r.before) return r;
    if (r.halvings == max_halvings) break;
    step *= 0.5;
    ++r.halvings;
  }
  r.embedding.assign(e.begin(), e.end());
  r.after = r.before;
  r.improved = false;
  return r;
}

SearchHistory run_seminas(const Evaluator& evaluator, const SearchBudget& budget, const ControllerConfig& config,
                          Rng& rng, const SemiNasOptions& options) {
  budget.check();
  const SearchSpaceSpec& space = evaluator.space();
  Session session(evaluator, budget.m_unlabeled == 0 ? "nao" : "seminas");
  session.fill_random(budget.n_initial, 0, rng);
  if (budget.iterations == 0) return std::move(session.history());

  ControllerModel model(space, config, rng.next());
  for (std::size_t it = 1; it <= budget.iterations; ++it) {
    Dataset labeled;
    for (const auto& r : session.history().evaluated) labeled.add_ground_truth(r.arch, r.accuracy);
    std::vector<CellGraph> unlabeled;
    unlabeled.reserve(budget.m_unlabeled);
    for (std::size_t i = 0; i < budget.m_unlabeled; ++i) unlabeled.push_back(random_architecture(space, rng));
    const auto report = fit_semi_supervised(model, labeled, unlabeled, rng);

    // Top K of labeled and pseudo-labeled records; ties broken by key so the
    // order does not depend on insertion.
    std::vector<const LabeledArch*> pool;
    for (const auto& r : labeled.records()) pool.push_back(&r);
    for (const auto& r : report.pseudo.records()) pool.push_back(&r);
    std::vector<ArchKey> keys(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) keys[i] = canonical_key(pool[i]->arch);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (pool[a]->accuracy != pool[b]->accuracy) return pool[a]->accuracy > pool[b]->accuracy;
      return keys[a] < keys[b];
    });
    std::vector<CellGraph> seeds;
    std::unordered_set<ArchKey> seed_keys;
    for (std::size_t idx : order) {
      if (seeds.size() == budget.k_seeds) break;
      if (seed_keys.insert(keys[idx]).second) seeds.push_back(pool[idx]->arch);
    }

    std::vector<TokenSequence> seed_tokens;
    for (const auto& g : seeds) seed_tokens.push_back(encode_tokens(g, space));
    const grad::Matrix embeddings = model.encode_batch(seed_tokens);

    const std::size_t target = session.count() + budget.new_per_iteration;
    for (double mult : options.multipliers) {
      if (session.count() >= target) break;
      grad::Matrix moved(embeddings.rows(), embeddings.cols());
      for (Eigen::Index s = 0; s < embeddings.rows(); ++s) {
        std::vector<double> e = row(embeddings, s);
        for (std::size_t step = 0; step < options.ascent_steps; ++step) {
          e = gradient_ascent_step(model, e, budget.step_size * mult, options.max_halvings).embedding;
        }
        std::copy(e.begin(), e.end(), moved.row(s).data());
      }
      const auto decoded = model.decode_batch(moved);
      for (const auto& tokens : decoded) {
        if (session.count() >= target) break;
        const CellGraph raw = decode_tokens(tokens, space);
        const auto pruned = prune(raw);
        if (!pruned) continue;
        session.try_evaluate(*pruned, it, "ascent");
      }
    }

    // Not enough novel decodes: mutate the seeds round-robin.
    std::size_t next_seed = 0;
    while (session.count() < target) {
      const CellGraph& parent = seeds[next_seed++ % seeds.size()];
      const auto child = session.novel_child(parent, rng);
      if (!child) session.exhausted("no novel architecture left");
      session.try_evaluate(*child, it, "mutation");
    }
  }
  return std::move(session.history());
}

SearchHistory run_nao(const Evaluator& evaluator, SearchBudget budget, ControllerConfig config, Rng& rng,
                      const SemiNasOptions& options) {
  budget.m_unlabeled = 0;
  config.upsample_ratio = 1;
  return run_seminas(evaluator, budget, config, rng, options);
}

SearchHistory run_random(const Evaluator& evaluator, std::size_t queries, Rng& rng) {
  if (queries == 0) throw UsageError("run_random: queries must be at least 1");
  Session session(evaluator, "random");
  session.fill_random(queries, 0, rng);
  return std::move(session.history());
}

namespace {

// Aging evolution. `choose` picks one of the proposed children; with a single
// candidate per cycle it is never called.
template <class Choose>
SearchHistory evolve(Session& session, std::size_t queries, const EvolutionOptions& opt, std::size_t candidates,
                     Rng& rng, Choose&& choose) {
  if (opt.population_size == 0 || opt.sample_size == 0 || opt.sample_size > opt.population_size) {
    throw UsageError("evolution: need 1 <= sample_size <= population_size");
  }
  if (queries < opt.population_size) throw UsageError("evolution: queries must be at least population_size");
  if (candidates == 0) throw UsageError("evolution: candidates must be at least 1");

  session.fill_random(opt.population_size, 0, rng);
  std::deque<std::size_t> population(opt.population_size);
  std::iota(population.begin(), population.end(), std::size_t{0});
  std::vector<std::size_t> slots(opt.population_size);
  std::size_t cycle = 0;
  while (session.count() < queries) {
    ++cycle;
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    // Partial Fisher-Yates: the first sample_size slots form the tournament.
    for (std::size_t i = 0; i < opt.sample_size; ++i) std::swap(slots[i], slots[i + rng.below(slots.size() - i)]);
    std::size_t parent = population[slots[0]];
    for (std::size_t i = 1; i < opt.sample_size; ++i) {
      const std::size_t cand = population[slots[i]];
      if (session.history().evaluated[cand].accuracy > session.history().evaluated[parent].accuracy) parent = cand;
    }
    const CellGraph parent_arch = session.history().evaluated[parent].arch;
    std::vector<CellGraph> children;
    std::unordered_set<ArchKey> child_keys;
    for (std::size_t c = 0; c < candidates; ++c) {
      auto child = session.novel_child(parent_arch, rng);
      if (!child) break;
      if (child_keys.insert(canonical_key(*child)).second) children.push_back(std::move(*child));
    }
    if (children.empty()) session.exhausted("no novel child");
    const std::size_t pick = children.size() == 1 ? 0 : choose(children, session);
    if (!session.try_evaluate(children[pick], cycle, "mutation")) continue;
    population.push_back(session.count() - 1);
    population.pop_front();
  }
  return std::move(session.history());
}

}  // namespace

SearchHistory run_re(const Evaluator& evaluator, std::size_t queries, const EvolutionOptions& options, Rng& rng) {
  // Same stream layout as run_semi_re, whose predictor draws from this fork.
  (void)rng.fork(kAuxStreamTag);
  Session session(evaluator, "re");
  return evolve(session, queries, options, 1, rng, [](const std::vector<CellGraph>&, Session&) { return 0; });
}

SearchHistory run_semi_re(const Evaluator& evaluator, std::size_t queries, const SemiEvolutionOptions& options,
                          const ControllerConfig& config, Rng& rng) {
  if (options.retrain_every == 0) throw UsageError("run_semi_re: retrain_every must be at least 1");
  Rng aux = rng.fork(kAuxStreamTag);
  Session session(evaluator, "semi_re");
  std::optional<ControllerModel> model;
  std::size_t trained_at = 0;
  auto choose = [&](const std::vector<CellGraph>& children, Session& s) -> std::size_t {
    if (!model || s.count() >= trained_at + options.retrain_every) {
      std::optional<std::size_t> epochs = options.retrain_epochs;
      if (!model) {
        model.emplace(s.space(), config, aux.next());
        epochs.reset();
      }
      Dataset labeled;
      for (const auto& r : s.history().evaluated) labeled.add_ground_truth(r.arch, r.accuracy);
      std::vector<CellGraph> unlabeled;
      for (std::size_t i = 0; i < options.m_unlabeled; ++i) unlabeled.push_back(random_architecture(s.space(), aux));
      fit_semi_supervised(*model, labeled, unlabeled, aux, epochs);
      trained_at = s.count();
    }
    const auto scores = model->predict_architectures(children);
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  };
  return evolve(session, queries, options.evolution, options.candidates, rng, choose);
}

// ---------------------------------------------------------------------------
// Reporting

void write_history_jsonl(const SearchHistory& history, const SearchSpaceSpec& space, std::ostream& out) {
  double best = -1.0;
  std::size_t ledger = 0;
  for (const auto& r : history.evaluated) {
    best = std::max(best, r.accuracy);
    ++ledger;
    nlohmann::ordered_json j;
    j["iter"] = r.iteration;
    j["hash"] = r.hash;
    j["accuracy"] = r.accuracy;
    j["test_accuracy"] = r.test_accuracy;
    j["source"] = r.source;
    j["cumulative_best"] = best;
    j["ledger"] = ledger;
    j["arch"] = to_text(r.arch, space);
    out << j.dump() << '\n';
  }
}

SearchHistory read_history_jsonl(std::istream& in, const SearchSpaceSpec& space) {
  SearchHistory h;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvaluatedArch r;
      r.arch = from_text(j.at("arch").get<std::string>(), space);
      r.hash = j.at("hash").get<std::string>();
      r.accuracy = j.at("accuracy").get<double>();
      r.test_accuracy = j.at("test_accuracy").get<double>();
      r.iteration = j.at("iter").get<std::size_t>();
      r.source = j.at("source").get<std::string>();
      h.ledger.record(r.hash, r.accuracy);
      h.evaluated.push_back(std::move(r));
    } catch (const std::exception& ex) {
      throw LoadError("history: line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return h;
}

RunStats report_stats(const SearchHistory& history, const Evaluator& backend) {
  const EvaluatedArch& best = history.best();
  RunStats s;
  s.best_valid_accuracy = best.accuracy;
  s.best_test_accuracy = best.test_accuracy;
  s.queries = history.ledger.count();
  if (const auto opt = backend.optimum_test_accuracy()) s.test_regret = *opt - best.test_accuracy;
  s.rank = rank_of(best.test_accuracy, backend.sorted_test_accuracies());
  return s;
}

}  // namespace seminas
