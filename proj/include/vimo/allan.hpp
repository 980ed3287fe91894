#pragma once

#include <span>
#include <utility>
#include <vector>

namespace vimo {

/// Overlapping Allan deviation of a uniformly sampled scalar sequence.
/// Each tau is rounded to a whole number of samples m = round(tau * rate);
/// the sequence must provide at least two clusters (N >= 2m + 1).
/// Returns (tau_actual, deviation) pairs. Throws ValidationError when a
/// requested tau is too large for the record or not representable (m < 1).
std::vector<std::pair<double, double>> allanDeviation(std::span<const double> samples, double rate,
                                                      std::span<const double> taus);

/// Log-spaced taus covering the valid range for a record of length n at the
/// given rate, at most points_per_decade values per decade.
std::vector<double> allanDefaultTaus(size_t n, double rate, int points_per_decade = 10);

}  // namespace vimo
