#pragma once

#include "bnmf/types.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace bnmf::test {

inline Matrix random_uniform(Index rows, Index cols, std::mt19937_64& rng,
                             double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix M(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) M(i, j) = u(rng);
  return M;
}

inline Factorization random_factorization(Index D, Index N, Index R,
                                          std::mt19937_64& rng,
                                          double lo = 0.1, double hi = 1.0) {
  return {random_uniform(D, R, rng, lo, hi), random_uniform(R, N, rng, lo, hi)};
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b)));
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

// Central differences over every entry of a matrix argument.
inline Matrix fd_matrix_gradient(const std::function<double(const Matrix&)>& f,
                                 const Matrix& M, double h = 1e-6) {
  Matrix G(M.rows(), M.cols());
  for (Index j = 0; j < M.cols(); ++j)
    for (Index i = 0; i < M.rows(); ++i) {
      const double step = h * (1.0 + std::abs(M(i, j)));
      Matrix p = M, m = M;
      p(i, j) += step;
      m(i, j) -= step;
      G(i, j) = (f(p) - f(m)) / (2.0 * step);
    }
  return G;
}

// Trace of the Hessian from second central differences along each coordinate.
inline double fd_hessian_trace(const std::function<double(const Vector&)>& f,
                               const Vector& x, double h = 1e-4) {
  const double f0 = f(x);
  double tr = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    Vector p = x, m = x;
    p(i) += h;
    m(i) -= h;
    tr += (f(p) - 2.0 * f0 + f(m)) / (h * h);
  }
  return tr;
}

}  // namespace bnmf::test
