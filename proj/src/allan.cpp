#include "vimo/allan.hpp"

#include <cmath>
#include <string>

#include "vimo/errors.hpp"

namespace vimo {

std::vector<std::pair<double, double>> allanDeviation(std::span<const double> samples, double rate,
                                                      std::span<const double> taus) {
  const size_t n = samples.size();
  if (rate <= 0.0) {
    throw ValidationError("allanDeviation: rate must be positive");
  }
  // Prefix sums for O(1) cluster means.
  std::vector<double> prefix(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + samples[i];

  std::vector<std::pair<double, double>> out;
  out.reserve(taus.size());
  for (double tau : taus) {
    const long m = std::lround(tau * rate);
    if (m < 1 || static_cast<size_t>(2 * m) >= n) {
      throw ValidationError("allanDeviation: tau " + std::to_string(tau) +
                            " s is out of range for a record of " + std::to_string(n) +
                            " samples at " + std::to_string(rate) + " Hz");
    }
    const size_t mm = static_cast<size_t>(m);
    double acc = 0.0;
    const size_t count = n - 2 * mm;
    for (size_t i = 0; i < count; ++i) {
      const double d = prefix[i + 2 * mm] - 2.0 * prefix[i + mm] + prefix[i];
      acc += d * d;
    }
    const double var = acc / (2.0 * static_cast<double>(mm) * static_cast<double>(mm) *
                              static_cast<double>(count));
    out.emplace_back(static_cast<double>(mm) / rate, std::sqrt(var));
  }
  return out;
}

std::vector<double> allanDefaultTaus(size_t n, double rate, int points_per_decade) {
  std::vector<double> taus;
  if (n < 3 || rate <= 0.0) return taus;
  const double tau_min = 1.0 / rate;
  const double tau_max = static_cast<double>((n - 1) / 2) / rate;
  if (tau_max < tau_min) return taus;
  const double step = 1.0 / points_per_decade;
  long last_m = 0;
  for (double e = std::log10(tau_min);; e += step) {
    const double tau = std::pow(10.0, e);
    if (tau > tau_max * (1.0 + 1e-12)) break;
    const long m = std::lround(tau * rate);
    if (m >= 1 && m != last_m && static_cast<size_t>(2 * m) < n) {
      taus.push_back(static_cast<double>(m) / rate);
      last_m = m;
    }
  }
  return taus;
}

}  // namespace vimo
