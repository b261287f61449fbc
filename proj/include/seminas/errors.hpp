#pragma once

#include <stdexcept>
#include <string>

namespace seminas {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf in a value, gradient or loss.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A call that violates an operation's precondition (empty dataset, ratio 0, ...).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DecodeError : std::runtime_error {
  DecodeError(std::size_t index, const std::string& reason)
      : std::runtime_error("token " + std::to_string(index) + ": " + reason), index(index) {}
  std::size_t index;
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tabular lookup of an architecture that the table does not contain.
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

}  // namespace seminas
