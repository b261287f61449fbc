#include "seminas/search_space.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "seminas/errors.hpp"

namespace seminas {

namespace {

constexpr std::size_t kMaxSupportedNodes = 8;
constexpr std::size_t kMaxSupportedOps = 15;

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Key of `g` with its intermediate nodes taken in the order `order`
// (order[k] = original index of new node k+1). Ops occupy the high bits so
// numeric order is lexicographic order on (node count, ops, adjacency).
ArchKey key_under_order(const CellGraph& g, std::span<const std::size_t> order) {
  const std::size_t n = g.size();
  std::array<std::size_t, kMaxSupportedNodes> original{};
  original[0] = 0;
  for (std::size_t k = 0; k < order.size(); ++k) original[k + 1] = order[k];
  original[n - 1] = n - 1;

  ArchKey key = static_cast<ArchKey>(n) << 60;
  int shift = 56;
  for (std::size_t k = 1; k + 1 < n; ++k, shift -= 4) key |= static_cast<ArchKey>(g.ops[original[k]]) << shift;
  int bit = 27;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, --bit) {
      if (g.edge(original[i], original[j])) key |= ArchKey{1} << bit;
    }
  }
  return key;
}

bool is_topological(const CellGraph& g, std::span<const std::size_t> order) {
  const std::size_t n = g.size();
  std::array<std::size_t, kMaxSupportedNodes> position{};
  position[0] = 0;
  position[n - 1] = n - 1;
  for (std::size_t k = 0; k < order.size(); ++k) position[order[k]] = k + 1;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (g.edge(i, j) && position[i] >= position[j]) return false;
  return true;
}

CellGraph relabel(const CellGraph& g, std::span<const std::size_t> order) {
  const std::size_t n = g.size();
  std::vector<std::size_t> original(n);
  original[0] = 0;
  original[n - 1] = n - 1;
  for (std::size_t k = 0; k < order.size(); ++k) original[k + 1] = order[k];
  CellGraph out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.ops[i] = g.ops[original[i]];
    for (std::size_t j = i + 1; j < n; ++j) out.set_edge(i, j, g.edge(original[i], original[j]));
  }
  return out;
}

// Minimal-key ordering of an already pruned graph.
std::pair<CellGraph, ArchKey> canonical_of_pruned(const CellGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::size_t> order(n - 2);
  std::iota(order.begin(), order.end(), std::size_t{1});
  std::vector<std::size_t> best = order;
  ArchKey best_key = key_under_order(g, order);  // identity is topological
  while (std::next_permutation(order.begin(), order.end())) {
    if (!is_topological(g, order)) continue;
    const ArchKey k = key_under_order(g, order);
    if (k < best_key) {
      best_key = k;
      best = order;
    }
  }
  return {relabel(g, best), best_key};
}

// Canonical form plus the number of distinct labelled forms of the same cell.
std::pair<CellGraph, std::size_t> canonical_with_forms(const CellGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::size_t> order(n - 2);
  std::iota(order.begin(), order.end(), std::size_t{1});
  std::vector<std::size_t> best = order;
  ArchKey best_key = key_under_order(g, order);
  std::vector<ArchKey> keys = {best_key};
  while (std::next_permutation(order.begin(), order.end())) {
    if (!is_topological(g, order)) continue;
    keys.push_back(key_under_order(g, order));
    if (keys.back() < best_key) {
      best_key = keys.back();
      best = order;
    }
  }
  std::sort(keys.begin(), keys.end());
  const auto forms = static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
  return {relabel(g, best), forms};
}

}  // namespace

void SearchSpaceSpec::check() const {
  if (op_vocabulary.empty()) throw ConfigError("search space: op vocabulary is empty");
  if (op_vocabulary.size() > kMaxSupportedOps) throw ConfigError("search space: at most 15 ops are supported");
  if (max_nodes < 2 || max_nodes > kMaxSupportedNodes) throw ConfigError("search space: max_nodes must be in [2, 8]");
  std::set<std::string> seen;
  for (const auto& name : op_vocabulary) {
    if (name == "input" || name == "output") throw ConfigError("search space: '" + name + "' is reserved");
    if (name.empty() || name.find_first_of(",;=\"") != std::string::npos) {
      throw ConfigError("search space: bad op name '" + name + "'");
    }
    if (!seen.insert(name).second) throw ConfigError("search space: duplicate op '" + name + "'");
  }
}

int SearchSpaceSpec::op_id(std::string_view name) const {
  if (name == "input") return kInputOp;
  if (name == "output") return kOutputOp;
  for (std::size_t i = 0; i < op_vocabulary.size(); ++i)
    if (op_vocabulary[i] == name) return static_cast<int>(i);
  return -3;
}

std::string SearchSpaceSpec::op_name(int id) const {
  if (id == kInputOp) return "input";
  if (id == kOutputOp) return "output";
  if (id < 0 || static_cast<std::size_t>(id) >= op_vocabulary.size()) return "?" + std::to_string(id);
  return op_vocabulary[static_cast<std::size_t>(id)];
}

CellGraph::CellGraph(std::size_t n) : ops(n, 0), adjacency(n * n, 0) {
  if (n > 0) ops.front() = kInputOp;
  if (n > 1) ops.back() = kOutputOp;
}

std::size_t CellGraph::num_edges() const {
  return static_cast<std::size_t>(std::count(adjacency.begin(), adjacency.end(), std::uint8_t{1}));
}

std::vector<Violation> validate(const CellGraph& g, const SearchSpaceSpec& spec) {
  std::vector<Violation> out;
  const std::size_t n = g.size();
  if (g.adjacency.size() != n * n) {
    out.push_back({ViolationKind::kShapeMismatch, "adjacency has " + std::to_string(g.adjacency.size()) +
                                                      " entries for " + std::to_string(n) + " nodes"});
    return out;
  }
  if (n < 2) {
    out.push_back({ViolationKind::kTooFewNodes, "cell needs at least input and output nodes"});
    return out;
  }
  if (n > spec.max_nodes) {
    out.push_back({ViolationKind::kTooManyNodes,
                   "node budget exceeded: " + std::to_string(n) + " > " + std::to_string(spec.max_nodes)});
  }
  if (g.ops.front() != kInputOp || g.ops.back() != kOutputOp) {
    out.push_back({ViolationKind::kBadTerminalOps, "first node must be input and last node output"});
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (g.ops[i] < 0 || static_cast<std::size_t>(g.ops[i]) >= spec.num_ops()) {
      out.push_back({ViolationKind::kUnknownOp, "node " + std::to_string(i) + " has unknown op " + std::to_string(g.ops[i])});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (g.adjacency[i * n + j] != 0) {
        out.push_back({ViolationKind::kNotUpperTriangular,
                       "edge " + std::to_string(i) + "->" + std::to_string(j) + " is not forward"});
      }
    }
  }
  const std::size_t edges = g.num_edges();
  if (edges > spec.max_edges) {
    out.push_back({ViolationKind::kEdgeBudgetExceeded,
                   "edge budget exceeded: " + std::to_string(edges) + " > " + std::to_string(spec.max_edges)});
  }
  // Reachability along forward edges only, so a malformed lower triangle does
  // not produce misleading path violations on top of the one reported above.
  std::vector<char> from_input(n, 0), to_output(n, 0);
  from_input[0] = 1;
  for (std::size_t j = 1; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (from_input[i] && g.edge(i, j)) from_input[j] = 1;
  to_output[n - 1] = 1;
  for (std::size_t i = n - 1; i-- > 0;)
    for (std::size_t j = i + 1; j < n; ++j)
      if (to_output[j] && g.edge(i, j)) to_output[i] = 1;
  if (!from_input[n - 1]) {
    out.push_back({ViolationKind::kNoInputOutputPath, "no path from input to output"});
  } else {
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (!from_input[i] || !to_output[i]) {
        out.push_back({ViolationKind::kNodeOffPath, "node " + std::to_string(i) + " not on any input-output path"});
      }
    }
  }
  return out;
}

std::optional<CellGraph> prune(const CellGraph& g) {
  const std::size_t n = g.size();
  if (n < 2) return std::nullopt;
  std::vector<char> from_input(n, 0), to_output(n, 0);
  from_input[0] = 1;
  for (std::size_t j = 1; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (from_input[i] && g.edge(i, j)) from_input[j] = 1;
  if (!from_input[n - 1]) return std::nullopt;
  to_output[n - 1] = 1;
  for (std::size_t i = n - 1; i-- > 0;)
    for (std::size_t j = i + 1; j < n; ++j)
      if (to_output[j] && g.edge(i, j)) to_output[i] = 1;

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (from_input[i] && to_output[i]) keep.push_back(i);
  CellGraph out(keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a) {
    out.ops[a] = g.ops[keep[a]];
    for (std::size_t b = a + 1; b < keep.size(); ++b) out.set_edge(a, b, g.edge(keep[a], keep[b]));
  }
  return out;
}

CellGraph canonicalize(const CellGraph& g) {
  auto pruned = prune(g);
  if (!pruned) throw UsageError("canonicalize: graph has no input-output path");
  if (pruned->size() > kMaxSupportedNodes) throw UsageError("canonicalize: more than 8 nodes");
  return canonical_of_pruned(*pruned).first;
}

ArchKey canonical_key(const CellGraph& g) {
  auto pruned = prune(g);
  if (!pruned) throw UsageError("canonical_key: graph has no input-output path");
  if (pruned->size() > kMaxSupportedNodes) throw UsageError("canonical_key: more than 8 nodes");
  return canonical_of_pruned(*pruned).second;
}

std::string ops_field(const CellGraph& g, const SearchSpaceSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i) out += ',';
    out += spec.op_name(g.ops[i]);
  }
  return out;
}

std::string adjacency_field(const CellGraph& g) {
  std::string out(g.adjacency.size(), '0');
  for (std::size_t i = 0; i < g.adjacency.size(); ++i) out[i] = g.adjacency[i] ? '1' : '0';
  return out;
}

std::string to_text(const CellGraph& g, const SearchSpaceSpec& spec) {
  return "ops=" + ops_field(g, spec) + ";adj=" + adjacency_field(g);
}

CellGraph from_fields(std::string_view ops, std::string_view adj, const SearchSpaceSpec& spec) {
  const auto names = split(ops, ',');
  const std::size_t n = names.size();
  if (adj.size() != n * n) {
    throw DomainError("architecture: adjacency has " + std::to_string(adj.size()) + " entries, expected " +
                      std::to_string(n * n));
  }
  CellGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int id = spec.op_id(names[i]);
    if (id == -3) throw DomainError("architecture: unknown op '" + std::string(names[i]) + "'");
    g.ops[i] = id;
  }
  for (std::size_t i = 0; i < adj.size(); ++i) {
    if (adj[i] != '0' && adj[i] != '1') throw DomainError("architecture: adjacency must be a 0/1 string");
    g.adjacency[i] = adj[i] == '1' ? 1 : 0;
  }
  return g;
}

CellGraph from_text(std::string_view text, const SearchSpaceSpec& spec) {
  const auto parts = split(text, ';');
  if (parts.size() != 2 || !parts[0].starts_with("ops=") || !parts[1].starts_with("adj=")) {
    throw DomainError("architecture: expected 'ops=<list>;adj=<bits>', got '" + std::string(text) + "'");
  }
  return from_fields(parts[0].substr(4), parts[1].substr(4), spec);
}

std::string canonical_hash(const CellGraph& g, const SearchSpaceSpec& spec) {
  const std::string text = to_text(canonicalize(g), spec);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("canonical_hash: SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

CellGraph random_architecture(const SearchSpaceSpec& spec, Rng& rng) {
  // Uniform over canonical cells: draw a uniform raw (size, matrix, ops)
  // tuple, keep it only if it is already a valid cell, then accept with
  // probability 1 / (number of distinct labelled forms of that cell).
  const std::size_t n_max = spec.max_nodes;
  std::vector<double> weight(n_max + 1, 0.0);
  double total = 0.0;
  for (std::size_t n = 2; n <= n_max; ++n) {
    weight[n] = std::ldexp(std::pow(static_cast<double>(spec.num_ops()), static_cast<double>(n - 2)),
                           static_cast<int>(n * (n - 1) / 2));
    total += weight[n];
  }
  while (true) {
    double u = rng.uniform() * total;
    std::size_t n = n_max;
    for (std::size_t k = 2; k < n_max; ++k) {
      if (u < weight[k]) {
        n = k;
        break;
      }
      u -= weight[k];
    }
    CellGraph raw(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) raw.set_edge(i, j, rng.bernoulli(0.5));
    for (std::size_t i = 1; i + 1 < n; ++i) raw.ops[i] = static_cast<int>(rng.below(spec.num_ops()));
    if (raw.num_edges() > spec.max_edges) continue;
    auto pruned = prune(raw);
    if (!pruned || pruned->size() != n) continue;
    const auto [canonical, forms] = canonical_with_forms(raw);
    if (forms > 1 && rng.below(forms) != 0) continue;
    return canonical;
  }
}

CellGraph apply_edit(const CellGraph& g, const Edit& e) {
  switch (e.kind) {
    case EditKind::kFlipEdge: {
      CellGraph out = g;
      out.set_edge(e.a, e.b, !g.edge(e.a, e.b));
      return out;
    }
    case EditKind::kChangeOp: {
      CellGraph out = g;
      out.ops[e.a] = static_cast<int>(e.b);
      return out;
    }
    case EditKind::kInsertNode: {
      // New node takes index e.b; old nodes from e.b on shift up by one.
      const std::size_t n = g.size();
      CellGraph out(n + 1);
      auto map = [&](std::size_t i) { return i < e.b ? i : i + 1; };
      for (std::size_t i = 0; i < n; ++i) {
        out.ops[map(i)] = g.ops[i];
        for (std::size_t j = i + 1; j < n; ++j) out.set_edge(map(i), map(j), g.edge(i, j));
      }
      out.ops[e.b] = e.op;
      out.set_edge(e.a, e.b, true);
      out.set_edge(e.b, e.b + 1, true);
      return out;
    }
  }
  return g;
}

std::vector<Edit> all_edits(const CellGraph& g, const SearchSpaceSpec& spec) {
  const std::size_t n = g.size();
  std::vector<Edit> edits;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edits.push_back({EditKind::kFlipEdge, i, j, 0});
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t op = 0; op < spec.num_ops(); ++op)
      if (static_cast<int>(op) != g.ops[i]) edits.push_back({EditKind::kChangeOp, i, op, 0});
  if (n < spec.max_nodes) {
    // Insert a node between i and the node currently at j (j > i).
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (std::size_t op = 0; op < spec.num_ops(); ++op)
          edits.push_back({EditKind::kInsertNode, i, j, static_cast<int>(op)});
  }
  return edits;
}

std::vector<CellGraph> single_edit_neighbors(const CellGraph& g, const SearchSpaceSpec& spec) {
  const ArchKey self = canonical_key(g);
  std::set<ArchKey> seen;
  std::vector<CellGraph> out;
  for (const Edit& e : all_edits(g, spec)) {
    auto pruned = prune(apply_edit(g, e));
    if (!pruned || pruned->num_edges() > spec.max_edges) continue;
    auto [canon, key] = canonical_of_pruned(*pruned);
    if (key == self || !seen.insert(key).second) continue;
    out.push_back(std::move(canon));
  }
  return out;
}

CellGraph mutate(const CellGraph& g, const SearchSpaceSpec& spec, Rng& rng) {
  const ArchKey self = canonical_key(g);
  std::vector<Edit> edits = all_edits(g, spec);
  // Lazy Fisher-Yates: draw edits uniformly without replacement until one works.
  for (std::size_t remaining = edits.size(); remaining > 0; --remaining) {
    const std::size_t pick = static_cast<std::size_t>(rng.below(remaining));
    std::swap(edits[pick], edits[remaining - 1]);
    auto pruned = prune(apply_edit(g, edits[remaining - 1]));
    if (!pruned || pruned->num_edges() > spec.max_edges) continue;
    auto [canon, key] = canonical_of_pruned(*pruned);
    if (key != self) return canon;
  }
  return canonicalize(g);
}

std::vector<CellGraph> enumerate_space(const SearchSpaceSpec& spec) {
  spec.check();
  if (spec.max_nodes > 5) throw UsageError("enumerate_space: only spaces with max_nodes <= 5 are enumerable here");
  std::vector<std::pair<ArchKey, CellGraph>> found;
  std::set<ArchKey> seen;
  for (std::size_t n = 2; n <= spec.max_nodes; ++n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    const std::size_t intermediates = n - 2;
    std::size_t op_combos = 1;
    for (std::size_t k = 0; k < intermediates; ++k) op_combos *= spec.num_ops();
    for (std::uint32_t mask = 0; mask < (1u << pairs.size()); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) > spec.max_edges) continue;
      CellGraph g(n);
      for (std::size_t p = 0; p < pairs.size(); ++p) g.set_edge(pairs[p].first, pairs[p].second, (mask >> p) & 1u);
      auto pruned = prune(g);
      if (!pruned || pruned->size() != n) continue;
      for (std::size_t combo = 0; combo < op_combos; ++combo) {
        std::size_t c = combo;
        for (std::size_t k = 1; k + 1 < n; ++k) {
          g.ops[k] = static_cast<int>(c % spec.num_ops());
          c /= spec.num_ops();
        }
        auto [canon, key] = canonical_of_pruned(g);
        if (seen.insert(key).second) found.emplace_back(key, std::move(canon));
      }
    }
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<CellGraph> out;
  out.reserve(found.size());
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

// ---------------------------------------------------------------------------

TokenLayout::TokenLayout(const SearchSpaceSpec& spec) : max_nodes_(spec.max_nodes), num_ops_(spec.num_ops()) {
  for (std::size_t i = 0; i < max_nodes_; ++i)
    for (std::size_t j = i + 1; j < max_nodes_; ++j) edge_pairs_.emplace_back(i, j);
  length_ = 1 + edge_pairs_.size() + (max_nodes_ - 2) + 1;
}

PositionKind TokenLayout::kind(std::size_t pos) const {
  if (pos == 0) return PositionKind::kStart;
  if (pos <= edge_pairs_.size()) return PositionKind::kEdge;
  if (pos + 1 < length_) return PositionKind::kOp;
  return PositionKind::kEnd;
}

std::vector<char> TokenLayout::legal(std::size_t pos) const {
  std::vector<char> out(vocab_size(), 0);
  switch (kind(pos)) {
    case PositionKind::kStart:
      out[kSos] = 1;
      break;
    case PositionKind::kEdge:
      out[kEdgeOff] = out[kEdgeOn] = 1;
      break;
    case PositionKind::kOp:
      out[kPad] = 1;
      for (std::size_t k = 0; k < num_ops_; ++k) out[kFirstOpToken + k] = 1;
      break;
    case PositionKind::kEnd:
      out[kEos] = 1;
      break;
  }
  return out;
}

TokenSequence encode_tokens(const CellGraph& g, const SearchSpaceSpec& spec) {
  const TokenLayout layout(spec);
  const std::size_t n = g.size();
  if (n < 2 || n > spec.max_nodes || g.adjacency.size() != n * n) {
    throw UsageError("encode_tokens: graph with " + std::to_string(n) + " nodes does not fit the layout");
  }
  const std::size_t n_max = spec.max_nodes;
  auto slot_of = [&](std::size_t node) { return node + 1 == n ? n_max - 1 : node; };
  std::vector<std::uint8_t> slot_adj(n_max * n_max, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (g.edge(i, j)) slot_adj[slot_of(i) * n_max + slot_of(j)] = 1;

  TokenSequence t(layout.length(), kPad);
  t.front() = kSos;
  t.back() = kEos;
  for (std::size_t pos = 1; pos <= layout.num_edge_positions(); ++pos) {
    const auto [i, j] = layout.edge_slots(pos);
    t[pos] = slot_adj[i * n_max + j] ? kEdgeOn : kEdgeOff;
  }
  for (std::size_t node = 1; node + 1 < n; ++node) {
    if (g.ops[node] < 0 || static_cast<std::size_t>(g.ops[node]) >= spec.num_ops()) {
      throw UsageError("encode_tokens: node " + std::to_string(node) + " has no searchable op");
    }
    t[layout.first_op_position() + node - 1] = kFirstOpToken + g.ops[node];
  }
  return t;
}

CellGraph decode_tokens(std::span<const int> tokens, const SearchSpaceSpec& spec) {
  const TokenLayout layout(spec);
  const std::size_t n_max = spec.max_nodes;
  for (std::size_t pos = 0; pos < tokens.size() && pos < layout.length(); ++pos) {
    const int tok = tokens[pos];
    if (tok < 0 || static_cast<std::size_t>(tok) >= layout.vocab_size()) throw DecodeError(pos, "token outside alphabet");
    switch (layout.kind(pos)) {
      case PositionKind::kStart:
        if (tok != kSos) throw DecodeError(pos, "expected SOS");
        break;
      case PositionKind::kEdge:
        if (tok != kEdgeOff && tok != kEdgeOn) throw DecodeError(pos, "expected edge bit");
        break;
      case PositionKind::kOp:
        if (tok != kPad && tok < kFirstOpToken) throw DecodeError(pos, "expected op token or PAD");
        break;
      case PositionKind::kEnd:
        if (tok != kEos) throw DecodeError(pos, "expected EOS");
        break;
    }
  }
  if (tokens.size() != layout.length()) {
    throw DecodeError(std::min(tokens.size(), layout.length()),
                      "sequence length " + std::to_string(tokens.size()) + ", layout needs " +
                          std::to_string(layout.length()));
  }

  std::vector<char> used(n_max, 0);
  used[0] = used[n_max - 1] = 1;
  for (std::size_t s = 1; s + 1 < n_max; ++s) used[s] = tokens[layout.first_op_position() + s - 1] != kPad;
  for (std::size_t pos = 1; pos <= layout.num_edge_positions(); ++pos) {
    const auto [i, j] = layout.edge_slots(pos);
    if (tokens[pos] == kEdgeOn && (!used[i] || !used[j])) throw DecodeError(pos, "edge touches an unused slot");
  }

  std::vector<std::size_t> slot_to_node(n_max, 0);
  std::size_t n = 0;
  for (std::size_t s = 0; s < n_max; ++s)
    if (used[s]) slot_to_node[s] = n++;
  CellGraph g(n);
  for (std::size_t s = 1; s + 1 < n_max; ++s)
    if (used[s]) g.ops[slot_to_node[s]] = tokens[layout.first_op_position() + s - 1] - kFirstOpToken;
  for (std::size_t pos = 1; pos <= layout.num_edge_positions(); ++pos) {
    const auto [i, j] = layout.edge_slots(pos);
    if (tokens[pos] == kEdgeOn) g.set_edge(slot_to_node[i], slot_to_node[j], true);
  }
  return g;
}

std::string token_name(int token, const SearchSpaceSpec& spec) {
  switch (token) {
    case kPad: return "PAD";
    case kSos: return "SOS";
    case kEos: return "EOS";
    case kEdgeOff: return "0";
    case kEdgeOn: return "1";
    default: break;
  }
  if (token >= kFirstOpToken && static_cast<std::size_t>(token - kFirstOpToken) < spec.num_ops()) {
    return spec.op_name(token - kFirstOpToken);
  }
  return "?" + std::to_string(token);
}

}  // namespace seminas
