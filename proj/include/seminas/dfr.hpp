#pragma once

// Diagonal focus rate of an encoder-decoder attention map: the share of
// attention mass inside a band of half-width b around the line o = k*i,
// k = O/I. Indices are 1-based; the band centre of column i is ceil(k*i) and
// rows outside [1, O] are dropped.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace seminas {

struct AttentionMap {
  std::size_t rows = 0;  // O, output length
  std::size_t cols = 0;  // I, input length
  std::vector<double> weights;  // row-major O x I
  bool row_stochastic = false;

  AttentionMap() = default;
  AttentionMap(std::size_t rows, std::size_t cols, std::vector<double> weights, bool row_stochastic = false);

  double at(std::size_t o, std::size_t i) const { return weights[o * cols + i]; }  // 0-based
  // Throws DomainError on negative or non-finite entries, a row-stochastic
  // flag that does not hold within 1e-6, or a size mismatch.
  void check() const;
};

// Inclusive 1-based row range [first, last] of the band for 1-based column i.
struct BandRows {
  std::size_t first = 1;
  std::size_t last = 1;
};
BandRows band_rows(std::size_t rows, std::size_t cols, std::size_t column, std::size_t b);

// Throws DomainError for an invalid map and NumericError when all mass is 0.
double compute_dfr(const AttentionMap& a, std::size_t b);

struct BatchDfr {
  double mean = 0.0;
  std::vector<double> per_map;
};
BatchDfr batch_dfr(const std::vector<AttentionMap>& maps, std::size_t b);

// Text file: first line `O I`, then O lines of I reals.
AttentionMap read_attention_map(std::istream& in);
AttentionMap load_attention_map(const std::filesystem::path& path);
void write_attention_map(const AttentionMap& a, std::ostream& out);

}  // namespace seminas
