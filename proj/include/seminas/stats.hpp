#pragma once

// Small statistics used by reports and the acceptance harness.

#include <cstddef>
#include <span>

namespace seminas::stats {

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> xs);
// Standard error of the mean.
double std_error(std::span<const double> xs);

// Kendall tau-b between two equally long samples; O(n^2). Returns 0 when
// either sample is constant.
double kendall_tau(std::span<const double> a, std::span<const double> b);

struct SignTest {
  std::size_t wins = 0;    // pairs with a > b
  std::size_t losses = 0;  // pairs with a < b
  std::size_t ties = 0;
  double p_value = 1.0;    // one-sided P(X >= wins), X ~ Binomial(wins + losses, 1/2)
};

// Paired one-sided sign test of "a tends to exceed b"; ties are dropped.
SignTest sign_test(std::span<const double> a, std::span<const double> b);

// P(X >= k) for X ~ Binomial(n, 1/2).
double binomial_upper_tail(std::size_t k, std::size_t n);

}  // namespace seminas::stats
