#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "morphsnn/numgrad/matrix.hpp"

namespace morphsnn {

struct SpectralRange {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

struct SymmetricEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column j pairs with values[j]
};

inline constexpr double kSymmetryTolerance = 1e-10;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
inline SymmetricEigen symmetric_eigen(const Matrix& sym) {
  if (sym.rows() != sym.cols()) throw DimensionError("symmetric_eigen: non-square " + sym.shape());
  if (max_asymmetry(sym) > kSymmetryTolerance) {
    throw ContractError("symmetric_eigen: input not symmetric (max asymmetry " +
                        std::to_string(max_asymmetry(sym)) + ")");
  }
  const std::size_t n = sym.rows();
  Matrix a = sym;
  Matrix v = Matrix::identity(n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-300) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

  SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

/// Extremal eigenvalues of a symmetric matrix.
inline SpectralRange spectral_range(const Matrix& sym) {
  if (sym.empty()) throw DimensionError("spectral_range: empty matrix");
  const auto eig = symmetric_eigen(sym);
  return {eig.values.front(), eig.values.back()};
}

}  // namespace morphsnn
