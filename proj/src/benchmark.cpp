#include "seminas/benchmark.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "seminas/errors.hpp"

namespace seminas {

// ---------------------------------------------------------------------------
// Ledger

QueryLedger::QueryLedger(const QueryLedger& other) {
  std::lock_guard lock(other.mu_);
  log_ = other.log_;
  test_count_ = other.test_count_;
}

QueryLedger& QueryLedger::operator=(const QueryLedger& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  log_ = other.log_;
  test_count_ = other.test_count_;
  return *this;
}

void QueryLedger::record(std::string hash, double accuracy) {
  std::lock_guard lock(mu_);
  log_.push_back({std::move(hash), accuracy, static_cast<std::uint64_t>(log_.size())});
}

void QueryLedger::record_test() {
  std::lock_guard lock(mu_);
  ++test_count_;
}

std::size_t QueryLedger::count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

std::size_t QueryLedger::test_count() const {
  std::lock_guard lock(mu_);
  return test_count_;
}

std::vector<QueryRecord> QueryLedger::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

double query(const Evaluator& backend, const CellGraph& g, QueryLedger& ledger, Split split) {
  const double acc = backend.accuracy(g, split);
  if (split == Split::kValid) {
    ledger.record(canonical_hash(g, backend.space()), acc);
  } else {
    ledger.record_test();
  }
  return acc;
}

std::optional<std::size_t> rank_of(double test_accuracy, const std::vector<double>& sorted_desc) {
  if (sorted_desc.empty()) return std::nullopt;
  // First position not strictly better than the value.
  const auto first = std::lower_bound(sorted_desc.begin(), sorted_desc.end(), test_accuracy, std::greater<>());
  return static_cast<std::size_t>(first - sorted_desc.begin()) + 1;
}

// ---------------------------------------------------------------------------
// Synthetic oracle

namespace {

std::vector<std::size_t> depths(const CellGraph& g) {
  std::vector<std::size_t> d(g.size(), 0);
  for (std::size_t j = 1; j < g.size(); ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (g.edge(i, j)) d[j] = std::max(d[j], d[i] + 1);
  return d;
}

std::size_t slot_of(std::size_t node, std::size_t n, std::size_t max_nodes) {
  return node + 1 == n ? max_nodes - 1 : node;
}

constexpr std::uint64_t kValidTag = 0x76616c6964ULL;  // "valid"
constexpr std::uint64_t kTestTag = 0x74657374ULL;     // "test"

}  // namespace

SyntheticOracleConfig SyntheticOracleConfig::generate(const SearchSpaceSpec& space, std::uint64_t seed, double scale,
                                                      double noise_sd, double base, std::size_t interactions) {
  SyntheticOracleConfig c = constant(space, base);
  c.seed = seed;
  c.noise_sd = noise_sd;
  Rng rng(Rng::mix(seed ^ 0x6f7261636c65ULL));
  for (double& w : c.op_weights) w = scale * rng.normal();
  const std::size_t n = space.max_nodes;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) c.edge_weights[i * n + j] = scale * rng.normal();
  for (std::size_t k = 0; k < interactions; ++k) {
    InteractionTerm t;
    t.op_a = static_cast<int>(rng.below(space.num_ops()));
    t.op_b = static_cast<int>(rng.below(space.num_ops()));
    t.weight = scale * rng.normal();
    c.interaction_pairs.push_back(t);
  }
  return c;
}

SyntheticOracleConfig SyntheticOracleConfig::constant(const SearchSpaceSpec& space, double base) {
  SyntheticOracleConfig c;
  c.base = base;
  c.noise_sd = 0.0;
  c.op_weights.assign(kBands * space.num_ops(), 0.0);
  c.edge_weights.assign(space.max_nodes * space.max_nodes, 0.0);
  return c;
}

double synthetic_score(const SyntheticOracleConfig& c, const SearchSpaceSpec& space, const CellGraph& g) {
  if (c.op_weights.size() != SyntheticOracleConfig::kBands * space.num_ops() ||
      c.edge_weights.size() != space.max_nodes * space.max_nodes) {
    throw ConfigError("synthetic oracle: weight tables do not match the search space");
  }
  const std::size_t n = g.size();
  const auto d = depths(g);
  double s = c.base;
  for (std::size_t v = 1; v + 1 < n; ++v) {
    const std::size_t band = std::min<std::size_t>(d[v], SyntheticOracleConfig::kBands) - 1;
    s += c.op_weights[band * space.num_ops() + static_cast<std::size_t>(g.ops[v])];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!g.edge(i, j)) continue;
      s += c.edge_weights[slot_of(i, n, space.max_nodes) * space.max_nodes + slot_of(j, n, space.max_nodes)];
      if (i == 0 || j + 1 == n) continue;
      for (const auto& t : c.interaction_pairs)
        if (t.op_a == g.ops[i] && t.op_b == g.ops[j]) s += t.weight;
    }
  }
  return s;
}

SyntheticAccuracy synthetic_accuracy(const SyntheticOracleConfig& c, const SearchSpaceSpec& space,
                                     const CellGraph& g) {
  const CellGraph canon = canonicalize(g);
  const double score = synthetic_score(c, space, canon);
  const ArchKey key = canonical_key(canon);
  auto noisy = [&](std::uint64_t tag) {
    if (c.noise_sd == 0.0) return std::clamp(score, 0.0, 1.0);
    Rng rng(Rng::mix(c.seed ^ Rng::mix(key ^ Rng::mix(tag))));
    return std::clamp(score + c.noise_sd * rng.normal(), 0.0, 1.0);
  };
  return {noisy(kValidTag), noisy(kTestTag)};
}

SyntheticOracle::SyntheticOracle(SearchSpaceSpec space, SyntheticOracleConfig config)
    : space_(std::move(space)), config_(std::move(config)) {
  space_.check();
  if (!(config_.noise_sd >= 0.0)) throw ConfigError("synthetic oracle: noise_sd must be non-negative");
  for (const auto& t : config_.interaction_pairs) {
    if (t.op_a < 0 || t.op_b < 0 || static_cast<std::size_t>(t.op_a) >= space_.num_ops() ||
        static_cast<std::size_t>(t.op_b) >= space_.num_ops()) {
      throw ConfigError("synthetic oracle: interaction term names an unknown op");
    }
  }
  // Shape check up front rather than on first query.
  (void)synthetic_score(config_, space_, [&] {
    CellGraph g(2);
    g.ops = {kInputOp, kOutputOp};
    g.set_edge(0, 1, true);
    return g;
  }());
}

double SyntheticOracle::accuracy(const CellGraph& g, Split split) const {
  if (!is_valid(g, space_)) throw LookupError("synthetic oracle: invalid architecture");
  const auto acc = synthetic_accuracy(config_, space_, g);
  return split == Split::kValid ? acc.valid : acc.test;
}

const std::vector<double>& SyntheticOracle::sorted_test_accuracies() const {
  std::call_once(enumerated_, [&] {
    if (!enumerable()) return;
    for (const auto& g : enumerate_space(space_)) sorted_test_.push_back(synthetic_accuracy(config_, space_, g).test);
    std::sort(sorted_test_.begin(), sorted_test_.end(), std::greater<>());
  });
  return sorted_test_;
}

std::optional<double> SyntheticOracle::optimum_test_accuracy() const {
  const auto& all = sorted_test_accuracies();
  if (all.empty()) return std::nullopt;
  return all.front();
}

std::string SyntheticOracle::describe() const {
  std::ostringstream os;
  os << "synthetic(seed=" << config_.seed << ", base=" << config_.base << ", noise_sd=" << config_.noise_sd << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tabular

TabularBenchmark::TabularBenchmark(SearchSpaceSpec space, std::vector<TabularEntry> entries,
                                   std::optional<double> optimum_test)
    : space_(std::move(space)), entries_(std::move(entries)), optimum_test_(optimum_test) {
  space_.check();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    entries_[i].arch = canonicalize(entries_[i].arch);
    if (!index_.emplace(canonical_key(entries_[i].arch), i).second) {
      throw LoadError("tabular: duplicate architecture " + canonical_hash(entries_[i].arch, space_));
    }
    sorted_test_.push_back(entries_[i].test_accuracy);
  }
  std::sort(sorted_test_.begin(), sorted_test_.end(), std::greater<>());
}

bool TabularBenchmark::contains(const CellGraph& g) const {
  return is_valid(g, space_) && index_.count(canonical_key(canonicalize(g))) > 0;
}

double TabularBenchmark::accuracy(const CellGraph& g, Split split) const {
  if (!is_valid(g, space_)) throw LookupError("tabular: invalid architecture");
  const auto it = index_.find(canonical_key(canonicalize(g)));
  if (it == index_.end()) throw LookupError("tabular: no entry for " + canonical_hash(g, space_));
  const auto& e = entries_[it->second];
  return split == Split::kValid ? e.valid_accuracy : e.test_accuracy;
}

std::optional<double> TabularBenchmark::optimum_test_accuracy() const {
  if (optimum_test_) return optimum_test_;
  if (sorted_test_.empty()) return std::nullopt;
  return sorted_test_.front();
}

std::string TabularBenchmark::describe() const {
  return "tabular(" + std::to_string(entries_.size()) + " entries)";
}

namespace {

// Splits one CSV line; double quotes group a field, "" inside quotes is a
// literal quote.
std::optional<std::vector<std::string>> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  if (quoted) return std::nullopt;
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// NASBench-style op names ("conv3x3-bn-relu") map onto the short vocabulary.
std::string normalize_ops(const std::string& ops) {
  std::string out;
  std::istringstream in(ops);
  for (std::string tok; std::getline(in, tok, ',');) {
    constexpr std::string_view suffix = "-bn-relu";
    if (tok.size() > suffix.size() && tok.compare(tok.size() - suffix.size(), suffix.size(), suffix) == 0) {
      tok.resize(tok.size() - suffix.size());
    }
    if (!out.empty()) out += ',';
    out += tok;
  }
  return out;
}

std::string format_accuracy(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

TabularBenchmark parse_tabular(std::istream& in, const SearchSpaceSpec& space, std::optional<double> optimum_test) {
  std::string line;
  if (!std::getline(in, line)) throw LoadError("tabular: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTabularHeader) {
    throw LoadError("tabular: line 1: expected header '" + std::string(kTabularHeader) + "', found '" + line + "'");
  }
  std::vector<TabularEntry> entries;
  std::vector<std::string> problems;
  std::unordered_map<ArchKey, std::size_t> first_line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto fields = split_csv(line);
    if (!fields || fields->size() != 5) {
      problems.push_back(where + "expected 5 columns");
      continue;
    }
    TabularEntry e;
    try {
      e.arch = from_fields(normalize_ops((*fields)[0]), (*fields)[1], space);
    } catch (const std::exception& ex) {
      problems.push_back(where + ex.what());
      continue;
    }
    const auto violations = validate(e.arch, space);
    if (!violations.empty()) {
      problems.push_back(where + "invalid architecture: " + violations.front().message);
      continue;
    }
    const auto valid = parse_double((*fields)[2]);
    const auto test = parse_double((*fields)[3]);
    if (!valid || !test) {
      problems.push_back(where + "accuracy is not a number");
      continue;
    }
    if (*valid < 0.0 || *valid > 1.0 || *test < 0.0 || *test > 1.0) {
      problems.push_back(where + "accuracy outside [0, 1]");
      continue;
    }
    int repeats = 0;
    const std::string& rs = (*fields)[4];
    const auto [ptr, ec] = std::from_chars(rs.data(), rs.data() + rs.size(), repeats);
    if (ec != std::errc() || ptr != rs.data() + rs.size() || repeats < 1) {
      problems.push_back(where + "repeats must be a positive integer");
      continue;
    }
    e.arch = canonicalize(e.arch);
    e.valid_accuracy = *valid;
    e.test_accuracy = *test;
    e.repeats = repeats;
    const auto [it, fresh] = first_line.emplace(canonical_key(e.arch), lineno);
    if (!fresh) {
      problems.push_back(where + "duplicate architecture (first seen on line " + std::to_string(it->second) + ")");
      continue;
    }
    entries.push_back(std::move(e));
  }
  if (!problems.empty()) {
    std::string msg = "tabular: " + std::to_string(problems.size()) + " malformed row(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw LoadError(msg);
  }
  return TabularBenchmark(space, std::move(entries), optimum_test);
}

std::filesystem::path metadata_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta.json");
}

TabularBenchmark load_tabular(const std::filesystem::path& path, const SearchSpaceSpec& space) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("tabular: cannot open " + path.string());
  std::optional<double> optimum;
  const auto meta = metadata_path(path);
  if (std::filesystem::exists(meta)) {
    std::ifstream ms(meta);
    try {
      const auto j = nlohmann::json::parse(ms);
      if (j.contains("optimum_test_accuracy")) optimum = j.at("optimum_test_accuracy").get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError("tabular: bad metadata file " + meta.string() + ": " + ex.what());
    }
    if (optimum && (*optimum < 0.0 || *optimum > 1.0)) {
      throw LoadError("tabular: optimum_test_accuracy outside [0, 1] in " + meta.string());
    }
  }
  return parse_tabular(in, space, optimum);
}

void dump_tabular(const TabularBenchmark& bench, const SearchSpaceSpec& space, std::ostream& out) {
  out << kTabularHeader << '\n';
  for (const auto& e : bench.entries()) {
    out << '"' << ops_field(e.arch, space) << "\"," << adjacency_field(e.arch) << ','
        << format_accuracy(e.valid_accuracy) << ',' << format_accuracy(e.test_accuracy) << ',' << e.repeats << '\n';
  }
}

void save_tabular(const TabularBenchmark& bench, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("tabular: cannot write " + path.string());
  dump_tabular(bench, bench.space(), out);
  if (const auto opt = bench.optimum_test_accuracy()) {
    std::ofstream ms(metadata_path(path), std::ios::binary);
    nlohmann::json j;
    j["optimum_test_accuracy"] = *opt;
    ms << j.dump() << '\n';
  }
}

TabularBenchmark tabulate(const SyntheticOracle& oracle) {
  if (!oracle.enumerable()) throw UsageError("tabulate: the search space is too large to enumerate");
  std::vector<TabularEntry> entries;
  for (const auto& g : enumerate_space(oracle.space())) {
    const auto acc = synthetic_accuracy(oracle.config(), oracle.space(), g);
    entries.push_back({g, acc.valid, acc.test, 1});
  }
  return TabularBenchmark(oracle.space(), std::move(entries));
}

}  // namespace seminas
