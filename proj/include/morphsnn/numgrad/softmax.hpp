#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "morphsnn/errors.hpp"

namespace morphsnn {

/// exp(x_i / tau) / sum_j exp(x_j / tau), stabilised by subtracting the max.
inline std::vector<double> softmax_temperature(std::span<const double> row, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax_temperature: tau must be positive");
  std::vector<double> out(row.size());
  if (row.empty()) return out;
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp((row[i] - mx) / tau);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

inline double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw DimensionError("logsumexp: empty input");
  const double mx = *std::max_element(xs.begin(), xs.end());
  double z = 0.0;
  for (double x : xs) z += std::exp(x - mx);
  return mx + std::log(z);
}

}  // namespace morphsnn
