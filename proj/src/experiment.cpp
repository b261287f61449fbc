#include "seminas/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "seminas/errors.hpp"
#include "seminas/stats.hpp"

namespace seminas {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value for '" + key + "': '" + value + "'");
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  return parse_number<std::size_t>(key, value);
}

double parse_real(const std::string& key, const std::string& value) {
  const double v = parse_number<double>(key, value);
  if (!std::isfinite(v)) throw ConfigError("config: bad value for '" + key + "': '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: bad value for '" + key + "': '" + value + "' (expected true or false)");
}

// "0-19", "3,5,9" or a mix such as "0-4,10".
std::vector<std::uint64_t> parse_seeds(const std::string& value) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : split_list(value)) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(parse_number<std::uint64_t>("seeds", part));
      continue;
    }
    const auto lo = parse_number<std::uint64_t>("seeds", trim(part.substr(0, dash)));
    const auto hi = parse_number<std::uint64_t>("seeds", trim(part.substr(dash + 1)));
    if (hi < lo) throw ConfigError("config: bad seed range '" + part + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("config: 'seeds' is empty");
  return seeds;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(seeds[i]);
  }
  return out;
}

ControllerKind parse_controller(const std::string& name) {
  if (name == "seminas") return ControllerKind::kSemiNas;
  if (name == "nao") return ControllerKind::kNao;
  if (name == "random") return ControllerKind::kRandom;
  if (name == "re") return ControllerKind::kRe;
  if (name == "semi_re") return ControllerKind::kSemiRe;
  throw ConfigError("config: unknown controller '" + name + "' (seminas, nao, random, re, semi_re)");
}

std::vector<std::uint64_t> default_seeds() {
  std::vector<std::uint64_t> s(20);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i;
  return s;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"preset", [](ExperimentConfig& c, const std::string&, const std::string& v) {
         auto seeds = c.seeds;
         auto backend = c.backend;
         c = preset_config(v);
         c.seeds = seeds;
         if (!backend.empty()) c.backend = backend;
       }},
      {"controller", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.controller = parse_controller(v); }},
      {"max_nodes", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.space.max_nodes = parse_count(k, v); }},
      {"max_edges", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.space.max_edges = parse_count(k, v); }},
      {"ops", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.space.op_vocabulary = split_list(v); }},
      {"n_initial", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.n_initial = parse_count(k, v); }},
      {"m_unlabeled", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.m_unlabeled = parse_count(k, v); }},
      {"k_seeds", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.k_seeds = parse_count(k, v); }},
      {"iterations", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.iterations = parse_count(k, v); }},
      {"step_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.step_size = parse_real(k, v); }},
      {"new_per_iteration", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.new_per_iteration = parse_count(k, v); }},
      {"steps_per_eval", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.budget.steps_per_eval = parse_count(k, v); }},
      {"ascent_steps", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seminas.ascent_steps = parse_count(k, v); }},
      {"queries", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.queries = parse_count(k, v); }},
      {"population_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.evolution.evolution.population_size = parse_count(k, v); }},
      {"sample_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.evolution.evolution.sample_size = parse_count(k, v); }},
      {"candidates", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.evolution.candidates = parse_count(k, v); }},
      {"retrain_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.evolution.retrain_every = parse_count(k, v); }},
      {"retrain_epochs", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.evolution.retrain_epochs = parse_count(k, v); }},
      {"hidden_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.hidden_size = parse_count(k, v); }},
      {"predictor_widths", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.predictor_widths.clear();
         for (const auto& w : split_list(v)) c.model.predictor_widths.push_back(parse_count(k, w));
       }},
      {"loss_weight_lambda", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.loss_weight_lambda = parse_real(k, v); }},
      {"learning_rate", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.learning_rate = parse_real(k, v); }},
      {"predictor_learning_rate", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.predictor_learning_rate = parse_real(k, v); }},
      {"epochs_supervised", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.epochs_supervised = parse_count(k, v); }},
      {"epochs_semi", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.epochs_semi = parse_count(k, v); }},
      {"dropout_rate", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.dropout_rate = parse_real(k, v); }},
      {"upsample_ratio", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.upsample_ratio = parse_count(k, v); }},
      {"batch_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.batch_size = parse_count(k, v); }},
      {"grad_clip", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.grad_clip = parse_real(k, v); }},
      {"init_scale", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.init_scale = parse_real(k, v); }},
      {"warm_start", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.warm_start = parse_bool(k, v); }},
      {"cosine_decay", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.cosine_decay = parse_bool(k, v); }},
      {"normalize_targets", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.normalize_targets = parse_bool(k, v); }},
      {"backend", [](ExperimentConfig& c, const std::string&, const std::string& v) {
         if (v != "synthetic" && v != "tabular") throw ConfigError("config: backend must be 'synthetic' or 'tabular'");
         c.backend = v;
       }},
      {"backend_seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.backend_seed = parse_number<std::uint64_t>(k, v); }},
      {"backend_path", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.backend_path = v; }},
      {"oracle_scale", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.oracle_scale = parse_real(k, v); }},
      {"oracle_noise", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.oracle_noise = parse_real(k, v); }},
      {"oracle_base", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.oracle_base = parse_real(k, v); }},
      {"oracle_interactions", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.oracle_interactions = parse_count(k, v); }},
      {"seeds", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.seeds = parse_seeds(v); }},
      {"output_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
  };
  return table;
}

}  // namespace

std::string controller_name(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kSemiNas: return "seminas";
    case ControllerKind::kNao: return "nao";
    case ControllerKind::kRandom: return "random";
    case ControllerKind::kRe: return "re";
    case ControllerKind::kSemiRe: return "semi_re";
  }
  return "?";
}

std::size_t ExperimentConfig::expected_queries() const {
  switch (controller) {
    case ControllerKind::kSemiNas:
    case ControllerKind::kNao: return budget.total();
    default: return queries;
  }
}

void ExperimentConfig::check() const {
  if (backend.empty()) throw ConfigError("config: 'backend' is required (synthetic or tabular)");
  if (backend == "tabular" && backend_path.empty()) throw ConfigError("config: tabular backend needs 'backend_path'");
  if (seeds.empty()) throw ConfigError("config: 'seeds' is empty");
  if (!(oracle_noise >= 0.0)) throw ConfigError("config: oracle_noise must be non-negative");
  space.check();
  model.check();
  budget.check();
  if (controller == ControllerKind::kRandom || controller == ControllerKind::kRe ||
      controller == ControllerKind::kSemiRe) {
    if (queries == 0) throw ConfigError("config: queries must be at least 1");
  }
  if (controller == ControllerKind::kRe || controller == ControllerKind::kSemiRe) {
    const auto& e = evolution.evolution;
    if (e.population_size == 0 || e.sample_size == 0 || e.sample_size > e.population_size) {
      throw ConfigError("config: need 1 <= sample_size <= population_size");
    }
    if (queries < e.population_size) throw ConfigError("config: queries must be at least population_size");
    if (evolution.candidates == 0 || evolution.retrain_every == 0) {
      throw ConfigError("config: candidates and retrain_every must be at least 1");
    }
  }
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
  std::string ops, widths;
  for (const auto& op : space.op_vocabulary) ops += (ops.empty() ? "" : ",") + op;
  for (auto w : model.predictor_widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
  return {
      {"preset", preset},
      {"controller", controller_name(controller)},
      {"max_nodes", std::to_string(space.max_nodes)},
      {"max_edges", std::to_string(space.max_edges)},
      {"ops", ops},
      {"n_initial", std::to_string(budget.n_initial)},
      {"m_unlabeled", std::to_string(budget.m_unlabeled)},
      {"k_seeds", std::to_string(budget.k_seeds)},
      {"iterations", std::to_string(budget.iterations)},
      {"step_size", fmt(budget.step_size)},
      {"new_per_iteration", std::to_string(budget.new_per_iteration)},
      {"steps_per_eval", std::to_string(budget.steps_per_eval)},
      {"ascent_steps", std::to_string(seminas.ascent_steps)},
      {"queries", std::to_string(queries)},
      {"population_size", std::to_string(evolution.evolution.population_size)},
      {"sample_size", std::to_string(evolution.evolution.sample_size)},
      {"candidates", std::to_string(evolution.candidates)},
      {"retrain_every", std::to_string(evolution.retrain_every)},
      {"retrain_epochs", std::to_string(evolution.retrain_epochs)},
      {"hidden_size", std::to_string(model.hidden_size)},
      {"predictor_widths", widths},
      {"loss_weight_lambda", fmt(model.loss_weight_lambda)},
      {"learning_rate", fmt(model.learning_rate)},
      {"predictor_learning_rate", fmt(model.predictor_learning_rate)},
      {"epochs_supervised", std::to_string(model.epochs_supervised)},
      {"epochs_semi", std::to_string(model.epochs_semi)},
      {"dropout_rate", fmt(model.dropout_rate)},
      {"upsample_ratio", std::to_string(model.upsample_ratio)},
      {"batch_size", std::to_string(model.batch_size)},
      {"grad_clip", fmt(model.grad_clip)},
      {"init_scale", fmt(model.init_scale)},
      {"warm_start", fmt_bool(model.warm_start)},
      {"cosine_decay", fmt_bool(model.cosine_decay)},
      {"normalize_targets", fmt_bool(model.normalize_targets)},
      {"backend", backend},
      {"backend_seed", std::to_string(backend_seed)},
      {"backend_path", backend_path.string()},
      {"oracle_scale", fmt(oracle_scale)},
      {"oracle_noise", fmt(oracle_noise)},
      {"oracle_base", fmt(oracle_base)},
      {"oracle_interactions", std::to_string(oracle_interactions)},
      {"seeds", join_seeds(seeds)},
      {"output_dir", output_dir.string()},
  };
}

std::vector<std::string> preset_names() {
  return {"seminas-300", "seminas-2000", "nao-300",      "nao-2000",
          "random-2000", "re-2000",      "semi-re-1000", "semi-re-2000"};
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.seeds = default_seeds();
  auto small = [&] {
    c.budget.n_initial = 100;
    c.budget.k_seeds = 100;
    c.budget.new_per_iteration = 100;
    c.budget.iterations = 2;
  };
  auto large = [&] {
    c.budget.n_initial = 1100;
    c.budget.k_seeds = 100;
    c.budget.new_per_iteration = 300;
    c.budget.iterations = 3;
  };
  if (name == "seminas-300") {
    c.controller = ControllerKind::kSemiNas;
    small();
    c.budget.m_unlabeled = 10000;
    c.model.upsample_ratio = 100;
  } else if (name == "seminas-2000") {
    c.controller = ControllerKind::kSemiNas;
    large();
    c.budget.m_unlabeled = 10000;
    c.model.upsample_ratio = 10;
  } else if (name == "nao-300") {
    c.controller = ControllerKind::kNao;
    small();
    c.budget.m_unlabeled = 0;
  } else if (name == "nao-2000") {
    c.controller = ControllerKind::kNao;
    large();
    c.budget.m_unlabeled = 0;
  } else if (name == "random-2000") {
    c.controller = ControllerKind::kRandom;
    c.queries = 2000;
  } else if (name == "re-2000") {
    c.controller = ControllerKind::kRe;
    c.queries = 2000;
  } else if (name == "semi-re-1000" || name == "semi-re-2000") {
    c.controller = ControllerKind::kSemiRe;
    c.queries = name == "semi-re-1000" ? 1000 : 2000;
    c.budget.m_unlabeled = 1000;
  } else {
    std::string known;
    for (const auto& p : preset_names()) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("config: unknown preset '" + name + "' (" + known + ")");
  }
  return c;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(config, key, value);
}

ExperimentConfig parse_config(std::istream& in, const std::string& origin,
                              const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::optional<std::string> preset;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (!setters().count(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (const auto [pos, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": '" + key + "' already set on line " +
                        std::to_string(pos->second));
    }
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(key, value);
    }
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + kv + "' is not key=value");
    const std::string key = trim(kv.substr(0, eq));
    const std::string value = trim(kv.substr(eq + 1));
    if (!setters().count(key)) throw ConfigError("config: unknown key '" + key + "'");
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(key, value);
    }
  }
  ExperimentConfig config = preset ? preset_config(*preset) : ExperimentConfig{};
  if (config.seeds.empty()) config.seeds = default_seeds();
  for (const auto& [key, value] : entries) set_config_value(config, key, value);
  apply_seed_offset(config);
  config.check();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  return parse_config(in, path.string(), overrides);
}

void apply_seed_offset(ExperimentConfig& config) {
  const char* env = std::getenv("SEMINAS_SEED_OFFSET");
  if (!env || !*env) return;
  const auto offset = parse_number<std::uint64_t>("SEMINAS_SEED_OFFSET", env);
  for (auto& s : config.seeds) s += offset;
}

std::unique_ptr<Evaluator> make_evaluator(const ExperimentConfig& config) {
  if (config.backend == "synthetic") {
    return std::make_unique<SyntheticOracle>(
        config.space, SyntheticOracleConfig::generate(config.space, config.backend_seed, config.oracle_scale,
                                                      config.oracle_noise, config.oracle_base,
                                                      config.oracle_interactions));
  }
  if (config.backend == "tabular") return std::make_unique<TabularBenchmark>(load_tabular(config.backend_path, config.space));
  throw ConfigError("config: 'backend' is required (synthetic or tabular)");
}

SearchHistory run_one(const ExperimentConfig& config, const Evaluator& evaluator, std::uint64_t seed) {
  Rng rng(seed);
  SearchHistory h;
  switch (config.controller) {
    case ControllerKind::kSemiNas: h = run_seminas(evaluator, config.budget, config.model, rng, config.seminas); break;
    case ControllerKind::kNao: h = run_nao(evaluator, config.budget, config.model, rng, config.seminas); break;
    case ControllerKind::kRandom: h = run_random(evaluator, config.queries, rng); break;
    case ControllerKind::kRe: h = run_re(evaluator, config.queries, config.evolution.evolution, rng); break;
    case ControllerKind::kSemiRe: {
      SemiEvolutionOptions opt = config.evolution;
      opt.m_unlabeled = config.budget.m_unlabeled;
      h = run_semi_re(evaluator, config.queries, opt, config.model, rng);
      break;
    }
  }
  if (h.ledger.count() != config.expected_queries()) {
    throw std::logic_error("ledger counted " + std::to_string(h.ledger.count()) + " queries, expected " +
                           std::to_string(config.expected_queries()));
  }
  return h;
}

ExperimentSummary summarize(std::vector<SeedOutcome> outcomes) {
  ExperimentSummary s;
  s.seeds = std::move(outcomes);
  std::vector<double> test, valid, regret, rank;
  bool all_regret = true, all_rank = true;
  for (const auto& o : s.seeds) {
    if (!o.ok) {
      ++s.failed;
      continue;
    }
    test.push_back(o.stats.best_test_accuracy);
    valid.push_back(o.stats.best_valid_accuracy);
    if (o.stats.test_regret) {
      regret.push_back(*o.stats.test_regret);
    } else {
      all_regret = false;
    }
    if (o.stats.rank) {
      rank.push_back(static_cast<double>(*o.stats.rank));
    } else {
      all_rank = false;
    }
  }
  if (test.empty()) return s;
  s.mean_best_test = stats::mean(test);
  s.sd_best_test = stats::stddev(test);
  s.mean_best_valid = stats::mean(valid);
  if (all_regret) s.mean_regret = stats::mean(regret);
  if (all_rank) s.mean_rank = stats::mean(rank);
  return s;
}

namespace {

nlohmann::ordered_json config_json(const ExperimentConfig& config) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config.echo()) j[k] = v;
  return j;
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json aggregate_json(const ExperimentSummary& s) {
  nlohmann::ordered_json a;
  a["seeds_ok"] = s.seeds.size() - s.failed;
  a["seeds_failed"] = s.failed;
  a["mean_best_test_accuracy"] = s.mean_best_test;
  a["sd_best_test_accuracy"] = s.sd_best_test;
  a["mean_best_valid_accuracy"] = s.mean_best_valid;
  a["mean_test_regret"] = optional_json(s.mean_regret);
  a["mean_rank"] = optional_json(s.mean_rank);
  return a;
}

std::string na(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

void write_config_comment(const ExperimentConfig& config, std::ostream& out) {
  for (const auto& [k, v] : config.echo()) out << "# " << k << " = " << v << '\n';
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

void write_summary_json(const ExperimentConfig& config, const ExperimentSummary& s, std::ostream& out) {
  nlohmann::ordered_json j;
  j["config"] = config_json(config);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& o : s.seeds) {
    nlohmann::ordered_json r;
    r["seed"] = o.seed;
    r["status"] = o.ok ? "ok" : "failed";
    if (o.ok) {
      r["best_valid_accuracy"] = o.stats.best_valid_accuracy;
      r["best_test_accuracy"] = o.stats.best_test_accuracy;
      r["test_regret"] = optional_json(o.stats.test_regret);
      r["rank"] = o.stats.rank ? nlohmann::ordered_json(*o.stats.rank) : nlohmann::ordered_json(nullptr);
      r["queries"] = o.stats.queries;
    } else {
      r["error"] = o.error;
    }
    rows.push_back(std::move(r));
  }
  j["seeds"] = std::move(rows);
  j["aggregate"] = aggregate_json(s);
  out << j.dump(2) << '\n';
}

void write_summary_tsv(const ExperimentConfig& config, const ExperimentSummary& s, std::ostream& out) {
  write_config_comment(config, out);
  out << "seed\tstatus\tbest_valid_accuracy\tbest_test_accuracy\ttest_regret\trank\tqueries\n";
  for (const auto& o : s.seeds) {
    out << o.seed << '\t' << (o.ok ? "ok" : "failed");
    if (o.ok) {
      out << '\t' << fmt(o.stats.best_valid_accuracy) << '\t' << fmt(o.stats.best_test_accuracy) << '\t'
          << na(o.stats.test_regret) << '\t' << (o.stats.rank ? std::to_string(*o.stats.rank) : "NA") << '\t'
          << o.stats.queries;
    } else {
      out << "\tNA\tNA\tNA\tNA\tNA";
    }
    out << '\n';
  }
  out << "mean\t" << (s.failed ? "failed" : "ok") << '\t' << fmt(s.mean_best_valid) << '\t' << fmt(s.mean_best_test)
      << '\t' << na(s.mean_regret) << '\t' << na(s.mean_rank) << "\tNA\n";
  out << "sd\t" << (s.failed ? "failed" : "ok") << "\tNA\t" << fmt(s.sd_best_test) << "\tNA\tNA\tNA\n";
}

ExperimentSummary run_experiment(const ExperimentConfig& config, std::size_t jobs, std::ostream* progress) {
  config.check();
  const auto evaluator = make_evaluator(config);
  std::filesystem::create_directories(config.output_dir);

  std::vector<SeedOutcome> outcomes(config.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < config.seeds.size(); i = next++) {
      SeedOutcome& o = outcomes[i];
      o.seed = config.seeds[i];
      const auto path = config.output_dir / ("history_seed" + std::to_string(o.seed) + ".jsonl");
      try {
        const SearchHistory h = run_one(config, *evaluator, o.seed);
        std::ostringstream text;
        write_history_jsonl(h, config.space, text);
        write_text_file(path, text.str());
        o.stats = report_stats(h, *evaluator);
        o.ok = true;
      } catch (const BudgetError& e) {
        std::ostringstream text;
        write_history_jsonl(e.partial(), config.space, text);
        write_text_file(path, text.str());
        o.error = e.what();
      } catch (const std::exception& e) {
        o.error = e.what();
      }
      if (progress) {
        std::lock_guard lock(log_mu);
        *progress << controller_name(config.controller) << " seed " << o.seed << ": "
                  << (o.ok ? "best test " + fmt(o.stats.best_test_accuracy) : "FAILED: " + o.error) << '\n';
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, config.seeds.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  ExperimentSummary summary = summarize(std::move(outcomes));
  std::ostringstream json, tsv;
  write_summary_json(config, summary, json);
  write_summary_tsv(config, summary, tsv);
  write_text_file(config.output_dir / "summary.json", json.str());
  write_text_file(config.output_dir / "summary.tsv", tsv.str());
  return summary;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "m_unlabeled") return SweepAxis::kMUnlabeled;
  if (name == "upsample_ratio") return SweepAxis::kUpsampleRatio;
  throw ConfigError("sweep: unknown axis '" + name + "' (m_unlabeled or upsample_ratio)");
}

std::string sweep_axis_name(SweepAxis axis) {
  return axis == SweepAxis::kMUnlabeled ? "m_unlabeled" : "upsample_ratio";
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<std::string>& values,
                                std::size_t jobs, std::ostream* progress) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  const std::string name = sweep_axis_name(axis);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    ExperimentConfig c = config;
    set_config_value(c, name, v);
    c.output_dir = config.output_dir / (name + "_" + v);
    c.check();
    configs.push_back(std::move(c));
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (progress) *progress << name << " = " << values[i] << '\n';
    rows.push_back({values[i], run_experiment(configs[i], jobs, progress)});
  }

  std::filesystem::create_directories(config.output_dir);
  std::ostringstream tsv;
  write_config_comment(config, tsv);
  tsv << "# axis = " << name << '\n';
  tsv << name << "\tseeds_ok\tseeds_failed\tmean_best_test_accuracy\tsd_best_test_accuracy\tmean_best_valid_accuracy"
      << "\tmean_test_regret\tmean_rank\n";
  nlohmann::ordered_json j;
  j["config"] = config_json(config);
  j["axis"] = name;
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    const auto& s = r.summary;
    tsv << r.value << '\t' << s.seeds.size() - s.failed << '\t' << s.failed << '\t' << fmt(s.mean_best_test) << '\t'
        << fmt(s.sd_best_test) << '\t' << fmt(s.mean_best_valid) << '\t' << na(s.mean_regret) << '\t'
        << na(s.mean_rank) << '\n';
    nlohmann::ordered_json row;
    row["value"] = r.value;
    row["aggregate"] = aggregate_json(s);
    table.push_back(std::move(row));
  }
  j["rows"] = std::move(table);
  write_text_file(config.output_dir / "sweep.tsv", tsv.str());
  write_text_file(config.output_dir / "sweep.json", j.dump(2) + "\n");
  return rows;
}

}  // namespace seminas
