#pragma once

#include "bnmf/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace bnmf {

// Rank-R truncated SVD split as A_svd = U_R * Sigma_R, W_svd = V_R^T.
struct SvdPair {
  Matrix A_svd;  // D x R, orthogonal columns
  Matrix W_svd;  // R x N, orthonormal rows
  Vector singular_values;  // leading R values, nonincreasing
};

[[nodiscard]] SvdPair truncated_svd(const Matrix& X, Index R);

struct LinOptions {
  double tol{1e-4};
  int max_iter{500};
  int max_inner_iter{1000};
  double shrink{0.1};            // Armijo step shrink
  double sufficient_decrease{0.01};
};

struct LinTrace {
  std::vector<double> objective;  // ||X - AW||_F^2 after each outer iteration
  int iterations{0};
  bool converged{false};
  std::size_t clipped_entries{0};  // negative entries of X clipped on entry
};

// Random initialization: entries i.i.d. uniform on (0,1] scaled by
// sqrt(mean(X)/R).
[[nodiscard]] Factorization random_init(const Matrix& X, Index R,
                                        std::uint64_t seed);

// Alternating nonnegative least squares with projected-gradient subproblem
// solves and Armijo backtracking.
[[nodiscard]] Factorization lin_pg_nmf(const Matrix& X, Index R,
                                       const Factorization& init,
                                       const LinOptions& options = {},
                                       LinTrace* trace = nullptr);
[[nodiscard]] Factorization lin_pg_nmf(const Matrix& X, Index R,
                                       std::uint64_t seed,
                                       const LinOptions& options = {},
                                       LinTrace* trace = nullptr);

// The seeds used for restart i are seed + i.
[[nodiscard]] std::vector<Factorization> lin_restarts(
    const Matrix& X, Index R, int n_restarts, std::uint64_t seed,
    const LinOptions& options = {});

enum class NoiseEstimate { first, best, mean };

struct EmpiricalNoise {
  double sigma2{0.0};
  double eps{0.0};
  std::vector<Factorization> fits;
};

// sigma2 from the per-entry squared error (first / best / mean over fits),
// eps as the largest absolute residual over every fit and entry.
[[nodiscard]] EmpiricalNoise empirical_noise(
    const Matrix& X, Index R, int n_restarts, std::uint64_t seed,
    NoiseEstimate estimate = NoiseEstimate::first,
    const LinOptions& options = {});
[[nodiscard]] EmpiricalNoise empirical_noise(
    const Matrix& X, std::vector<Factorization> fits,
    NoiseEstimate estimate = NoiseEstimate::first);

}  // namespace bnmf
