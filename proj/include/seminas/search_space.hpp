#pragma once

// Cell-DAG architecture space: validity, canonical form, random generation,
// single-edit mutation and the fixed-layout token encoding.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seminas/rng.hpp"

namespace seminas {

inline constexpr int kInputOp = -1;
inline constexpr int kOutputOp = -2;

struct SearchSpaceSpec {
  std::size_t max_nodes = 7;
  std::size_t max_edges = 9;
  std::vector<std::string> op_vocabulary = {"conv1x1", "conv3x3", "maxpool3x3"};

  // Throws ConfigError when the spec cannot be represented (empty vocabulary,
  // reserved names, more than 8 nodes or 15 ops).
  void check() const;
  std::size_t num_ops() const { return op_vocabulary.size(); }
  int op_id(std::string_view name) const;  // -1 if unknown; also maps "input"/"output"
  std::string op_name(int id) const;
};

// Directed acyclic cell. Node 0 is INPUT, the last node is OUTPUT, and edges
// only go from lower to higher index.
struct CellGraph {
  std::vector<int> ops;
  std::vector<std::uint8_t> adjacency;  // n*n row-major, strictly upper triangular

  CellGraph() = default;
  explicit CellGraph(std::size_t n);

  std::size_t size() const { return ops.size(); }
  bool edge(std::size_t i, std::size_t j) const { return adjacency[i * ops.size() + j] != 0; }
  void set_edge(std::size_t i, std::size_t j, bool on) { adjacency[i * ops.size() + j] = on ? 1 : 0; }
  std::size_t num_edges() const;

  friend bool operator==(const CellGraph&, const CellGraph&) = default;
};

enum class ViolationKind {
  kTooFewNodes,
  kTooManyNodes,
  kEdgeBudgetExceeded,
  kBadTerminalOps,
  kUnknownOp,
  kNotUpperTriangular,
  kShapeMismatch,
  kNoInputOutputPath,
  kNodeOffPath,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

// Every violated rule; empty means valid.
std::vector<Violation> validate(const CellGraph& g, const SearchSpaceSpec& spec);
inline bool is_valid(const CellGraph& g, const SearchSpaceSpec& spec) { return validate(g, spec).empty(); }

// Drops nodes not on any INPUT->OUTPUT path. nullopt if no such path exists.
std::optional<CellGraph> prune(const CellGraph& g);

// Pruned graph relabelled to the lexicographically smallest (ops, adjacency)
// over all topological orderings of its intermediate nodes. Isomorphic graphs
// share one canonical form. Precondition: an INPUT->OUTPUT path exists.
CellGraph canonicalize(const CellGraph& g);

// Injective 64-bit key of a canonical graph with at most 8 nodes and 15 ops.
using ArchKey = std::uint64_t;
ArchKey canonical_key(const CellGraph& g);

// Lowercase hex SHA-256 of the canonical text form.
std::string canonical_hash(const CellGraph& g, const SearchSpaceSpec& spec);

// Text form `ops=<comma list>;adj=<row-major 0/1 string>`.
std::string to_text(const CellGraph& g, const SearchSpaceSpec& spec);
CellGraph from_text(std::string_view text, const SearchSpaceSpec& spec);
std::string ops_field(const CellGraph& g, const SearchSpaceSpec& spec);
std::string adjacency_field(const CellGraph& g);
CellGraph from_fields(std::string_view ops, std::string_view adj, const SearchSpaceSpec& spec);

// Valid canonical graph. Samples a dense random upper-triangular matrix over
// a random number of slots and prunes it; retries until valid.
CellGraph random_architecture(const SearchSpaceSpec& spec, Rng& rng);

enum class EditKind { kFlipEdge, kChangeOp, kInsertNode };

struct Edit {
  EditKind kind;
  std::size_t a = 0;  // edge source / node index / insertion source
  std::size_t b = 0;  // edge target / new op id / insertion target
  int op = 0;         // op of an inserted node
};

// Raw result of applying one edit (not pruned or canonicalized).
CellGraph apply_edit(const CellGraph& g, const Edit& e);

// Every primitive edit applicable to g within the node budget.
std::vector<Edit> all_edits(const CellGraph& g, const SearchSpaceSpec& spec);

// Canonical forms reachable by exactly one edit, excluding g itself.
std::vector<CellGraph> single_edit_neighbors(const CellGraph& g, const SearchSpaceSpec& spec);

// One random edit whose canonical result is valid and differs from g; g's
// canonical form if no such edit exists.
CellGraph mutate(const CellGraph& g, const SearchSpaceSpec& spec, Rng& rng);

// Every valid canonical graph with at most spec.max_nodes nodes, ordered by
// canonical key. Only feasible for small spaces (max_nodes <= 5).
std::vector<CellGraph> enumerate_space(const SearchSpaceSpec& spec);

// ---------------------------------------------------------------------------
// Token encoding.
//
// Fixed layout for max_nodes = n:
//   [SOS] [edge bits of the n x n upper triangle, row-major] [op of slots
//   1..n-2] [EOS]
// A graph with m nodes occupies slots 0..m-2 plus slot n-1 for OUTPUT; unused
// intermediate slots carry PAD and have no edges.

enum Token : int { kPad = 0, kSos = 1, kEos = 2, kEdgeOff = 3, kEdgeOn = 4, kFirstOpToken = 5 };

enum class PositionKind { kStart, kEdge, kOp, kEnd };

class TokenLayout {
 public:
  explicit TokenLayout(const SearchSpaceSpec& spec);

  std::size_t length() const { return length_; }
  std::size_t vocab_size() const { return kFirstOpToken + num_ops_; }
  std::size_t num_edge_positions() const { return edge_pairs_.size(); }
  std::size_t first_op_position() const { return 1 + edge_pairs_.size(); }
  PositionKind kind(std::size_t pos) const;

  // Slot pair for an edge position.
  std::pair<std::size_t, std::size_t> edge_slots(std::size_t pos) const { return edge_pairs_[pos - 1]; }
  // Slot for an op position.
  std::size_t op_slot(std::size_t pos) const { return pos - first_op_position() + 1; }

  // Tokens that may appear at `pos` under the fixed layout (ignoring the
  // sequence's other tokens).
  std::vector<char> legal(std::size_t pos) const;

  std::size_t max_nodes() const { return max_nodes_; }
  std::size_t num_ops() const { return num_ops_; }

 private:
  std::size_t max_nodes_;
  std::size_t num_ops_;
  std::size_t length_;
  std::vector<std::pair<std::size_t, std::size_t>> edge_pairs_;
};

using TokenSequence = std::vector<int>;

TokenSequence encode_tokens(const CellGraph& g, const SearchSpaceSpec& spec);

// Parses a sequence back into a graph (unused slots dropped, not pruned).
// Throws DecodeError with the first offending index.
CellGraph decode_tokens(std::span<const int> tokens, const SearchSpaceSpec& spec);

std::string token_name(int token, const SearchSpaceSpec& spec);

}  // namespace seminas
