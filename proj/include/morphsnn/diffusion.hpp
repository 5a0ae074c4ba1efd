#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "morphsnn/numgrad/matrix.hpp"
#include "morphsnn/numgrad/spectral.hpp"
#include "morphsnn/numgrad/tape.hpp"

namespace morphsnn {

/// Lower bound on every degree so isolated nodes do not divide by zero.
inline constexpr double kDegreeFloor = 1e-12;

/// Symmetric degree-normalised diffusion operator P = D^-1/2 S_sym D^-1/2.
struct DiffusionOperator {
  Matrix S_sym;
  std::vector<double> degrees;
  Matrix P;
  std::size_t steps = 0;

  [[nodiscard]] std::size_t nodes() const noexcept { return P.rows(); }
  [[nodiscard]] Matrix laplacian() const { return Matrix::identity(P.rows()) - P; }
};

namespace detail {

inline Matrix symmetrized(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) = 0.5 * (s(i, j) + s(j, i));
  return out;
}

inline std::vector<double> degrees_of(const Matrix& s_sym) {
  std::vector<double> d(s_sym.rows());
  for (std::size_t i = 0; i < s_sym.rows(); ++i) {
    double acc = 0.0;
    for (double v : s_sym.row(i)) acc += v;
    d[i] = std::max(acc, kDegreeFloor);
  }
  return d;
}

inline Matrix normalize(const Matrix& s_sym, const std::vector<double>& d) {
  Matrix p(s_sym.rows(), s_sym.cols());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) p(i, j) = s_sym(i, j) / std::sqrt(d[i] * d[j]);
  // Exact symmetry regardless of the rounding order above.
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = i + 1; j < p.cols(); ++j) p(j, i) = p(i, j);
  return p;
}

inline void require_square_nonnegative(const Matrix& s, const char* op) {
  if (s.rows() != s.cols()) throw DimensionError(std::string(op) + ": adjacency must be square, got " + s.shape());
  for (double v : s.values())
    if (v < 0.0) throw ContractError(std::string(op) + ": adjacency has a negative entry");
}

}  // namespace detail

/// Re-symmetrises a pruned adjacency and normalises it by its degrees. No
/// self-loops are added beyond those already present.
inline DiffusionOperator build_operator(const Matrix& s_hat, std::size_t steps) {
  detail::require_square_nonnegative(s_hat, "build_operator");
  DiffusionOperator op;
  op.S_sym = detail::symmetrized(s_hat);
  op.degrees = detail::degrees_of(op.S_sym);
  op.P = detail::normalize(op.S_sym, op.degrees);
  op.steps = steps;
  return op;
}

/// Differentiable counterpart of build_operator().P on the tape.
inline Var diffusion_operator(const Var& s_hat) {
  const Matrix& s = s_hat.value();
  detail::require_square_nonnegative(s, "diffusion_operator");
  const std::size_t n = s.rows();
  Matrix a = detail::symmetrized(s);
  std::vector<double> d = detail::degrees_of(a);
  Matrix p = detail::normalize(a, d);
  return s_hat.tape()->record(std::move(p), {s_hat}, [s_hat, n, a = std::move(a), d = std::move(d)](Tape& tp, const Matrix& g) {
    Matrix* gs = tp.adjoint(s_hat);
    if (!gs) return;
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = 1.0 / std::sqrt(d[i]);
    // P_ij = r_i A_ij r_j with r_i = d_i^{-1/2}, d_i = max(sum_j A_ij, floor).
    Matrix ga(n, n);
    std::vector<double> gd(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double gr = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        ga(i, j) += g(i, j) * r[i] * r[j];
        gr += (g(i, j) + g(j, i)) * a(i, j) * r[j];
      }
      // A floored degree is constant in A.
      gd[i] = d[i] == kDegreeFloor ? 0.0 : gr * (-0.5) * r[i] / d[i];
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += gd[i];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) (*gs)(i, j) += 0.5 * (ga(i, j) + ga(j, i));
  });
}

/// Graph signal: row 0 is the flattened source output, rows 1..N-1 zero.
inline Var init_signal(const Var& source_out, std::size_t n) {
  if (source_out.rows() != 1) throw DimensionError("init_signal: source must be a single row, got " + source_out.value().shape());
  if (n == 1) return source_out;
  Tape& tape = *source_out.tape();
  return vstack({source_out, tape.constant(Matrix(n - 1, source_out.cols(), 0.0))});
}

/// Y = P^M X by M sequential products (never by powering P).
inline Var diffuse(const Var& p, const Var& x, std::size_t steps) {
  if (p.rows() != p.cols() || p.cols() != x.rows()) {
    throw DimensionError("diffuse: operator " + p.value().shape() + " vs signal " + x.value().shape());
  }
  Var y = x;
  for (std::size_t m = 0; m < steps; ++m) y = matmul(p, y);
  return y;
}

inline Matrix diffuse(const DiffusionOperator& op, const Matrix& x, std::size_t steps) {
  Matrix y = x;
  for (std::size_t m = 0; m < steps; ++m) y = matmul(op.P, y);
  return y;
}

namespace detail {
inline void require_energy_inputs(const Matrix& y, const Matrix& s_sym) {
  if (s_sym.rows() != s_sym.cols() || s_sym.rows() != y.rows()) {
    throw DimensionError("dirichlet_energy: signal " + y.shape() + " vs adjacency " + s_sym.shape());
  }
  if (max_asymmetry(s_sym) > kSymmetryTolerance) throw ContractError("dirichlet_energy: adjacency not symmetric");
  for (double v : s_sym.values())
    if (v < 0.0) throw ContractError("dirichlet_energy: adjacency has a negative entry");
}
}  // namespace detail

/// tr(Y^T L_norm Y) with L_norm = Id - D^-1/2 S_sym D^-1/2.
inline double dirichlet_energy(const Matrix& y, const Matrix& s_sym) {
  detail::require_energy_inputs(y, s_sym);
  const auto d = detail::degrees_of(s_sym);
  const Matrix p = detail::normalize(s_sym, d);
  const std::size_t n = y.rows();
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double l = (i == j ? 1.0 : 0.0) - p(i, j);
      if (l == 0.0) continue;
      const auto yj = y.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += yi[c] * yj[c];
      e += l * dot;
    }
  }
  return e;
}

/// 1/2 sum_ij S_sym,ij || y_i / sqrt(d_i) - y_j / sqrt(d_j) ||^2.
inline double dirichlet_energy_pairwise(const Matrix& y, const Matrix& s_sym) {
  detail::require_energy_inputs(y, s_sym);
  const auto d = detail::degrees_of(s_sym);
  const std::size_t n = y.rows();
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double w = s_sym(i, j);
      if (w == 0.0) continue;
      const double ri = 1.0 / std::sqrt(d[i]);
      const double rj = 1.0 / std::sqrt(d[j]);
      double sq = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) {
        const double diff = y(i, c) * ri - y(j, c) * rj;
        sq += diff * diff;
      }
      e += 0.5 * w * sq;
    }
  return e;
}

inline double dirichlet_energy(const DiffusionOperator& op, const Matrix& y) { return dirichlet_energy(y, op.S_sym); }

/// One explicit gradient-descent step on the energy: (Id - 2 eta L_norm) Y.
inline Matrix euler_step(const DiffusionOperator& op, const Matrix& y, double eta) {
  Matrix step = Matrix::identity(op.nodes()) - op.laplacian() * (2.0 * eta);
  return matmul(step, y);
}

/// || P Y - (Id - 2 * 0.5 * L_norm) Y ||_F: diffusion equals a gradient step
/// of size 0.5.
inline double verify_gradient_flow(const DiffusionOperator& op, const Matrix& y) {
  return frobenius_norm(matmul(op.P, y) - euler_step(op, y, 0.5));
}

/// E_k = energy(P^k Y0) for k = 0..steps.
inline std::vector<double> energy_decay_profile(const DiffusionOperator& op, const Matrix& y0, std::size_t steps) {
  if (steps < 1) throw ParameterError("energy_decay_profile: steps must be >= 1");
  std::vector<double> out;
  out.reserve(steps + 1);
  Matrix y = y0;
  out.push_back(dirichlet_energy(op, y));
  for (std::size_t k = 0; k < steps; ++k) {
    y = matmul(op.P, y);
    out.push_back(dirichlet_energy(op, y));
  }
  return out;
}

}  // namespace morphsnn
