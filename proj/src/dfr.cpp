#include "seminas/dfr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "seminas/errors.hpp"

namespace seminas {

AttentionMap::AttentionMap(std::size_t rows, std::size_t cols, std::vector<double> weights, bool row_stochastic)
    : rows(rows), cols(cols), weights(std::move(weights)), row_stochastic(row_stochastic) {
  check();
}

void AttentionMap::check() const {
  if (rows == 0 || cols == 0) throw DomainError("attention map: O and I must be at least 1");
  if (weights.size() != rows * cols) {
    throw DomainError("attention map: " + std::to_string(weights.size()) + " weights for a " + std::to_string(rows) +
                      " x " + std::to_string(cols) + " map");
  }
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!std::isfinite(weights[k]) || weights[k] < 0.0) {
      throw DomainError("attention map: entry (" + std::to_string(k / cols + 1) + ", " +
                        std::to_string(k % cols + 1) + ") is negative or not finite");
    }
  }
  if (row_stochastic) {
    for (std::size_t o = 0; o < rows; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < cols; ++i) s += at(o, i);
      if (std::abs(s - 1.0) > 1e-6) {
        throw DomainError("attention map: row " + std::to_string(o + 1) + " sums to " + std::to_string(s));
      }
    }
  }
}

BandRows band_rows(std::size_t rows, std::size_t cols, std::size_t column, std::size_t b) {
  // ceil(k * i) with k = rows / cols kept as a ratio of integers.
  const std::size_t centre = (rows * column + cols - 1) / cols;
  const std::size_t first = centre > b ? centre - b : 1;
  const std::size_t last = std::min(rows, centre + b);
  return {std::max<std::size_t>(first, 1), last};
}

double compute_dfr(const AttentionMap& a, std::size_t b) {
  a.check();
  double band = 0.0, total = 0.0;
  for (std::size_t i = 1; i <= a.cols; ++i) {
    const BandRows r = band_rows(a.rows, a.cols, i, b);
    for (std::size_t o = 1; o <= a.rows; ++o) {
      const double w = a.at(o - 1, i - 1);
      total += w;
      if (o >= r.first && o <= r.last) band += w;
    }
  }
  if (total <= 0.0) throw NumericError("dfr: attention map has no mass");
  return std::min(1.0, band / total);
}

BatchDfr batch_dfr(const std::vector<AttentionMap>& maps, std::size_t b) {
  if (maps.empty()) throw UsageError("batch_dfr: no attention maps");
  BatchDfr out;
  double sum = 0.0;
  for (const auto& m : maps) {
    out.per_map.push_back(compute_dfr(m, b));
    sum += out.per_map.back();
  }
  out.mean = sum / static_cast<double>(maps.size());
  return out;
}

AttentionMap read_attention_map(std::istream& in) {
  long long rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 1 || cols < 1) throw LoadError("attention map: bad `O I` header");
  std::vector<double> w(static_cast<std::size_t>(rows * cols));
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (!(in >> w[k])) {
      throw LoadError("attention map: expected " + std::to_string(w.size()) + " values, read " + std::to_string(k));
    }
  }
  std::string extra;
  if (in >> extra) throw LoadError("attention map: trailing data '" + extra + "'");
  return AttentionMap(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(w));
}

AttentionMap load_attention_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("attention map: cannot open " + path.string());
  try {
    return read_attention_map(in);
  } catch (const std::exception& ex) {
    throw LoadError(path.string() + ": " + ex.what());
  }
}

void write_attention_map(const AttentionMap& a, std::ostream& out) {
  const auto old = out.precision(17);
  out << a.rows << ' ' << a.cols << '\n';
  for (std::size_t o = 0; o < a.rows; ++o) {
    for (std::size_t i = 0; i < a.cols; ++i) out << (i ? " " : "") << a.at(o, i);
    out << '\n';
  }
  out.precision(old);
}

}  // namespace seminas
