#pragma once

#include "bnmf/nmf_solve.hpp"
#include "bnmf/types.hpp"

#include <random>

namespace bnmf {

inline constexpr double kMinReciprocalCondition = 1e-12;

// Point on the oblique manifold: an invertible R x R matrix with unit
// Euclidean columns. Only constructible through the checked factories.
class ObliquePoint {
 public:
  [[nodiscard]] const Matrix& matrix() const { return Q_; }
  [[nodiscard]] Index rank() const { return Q_.cols(); }

  // Validates column norms (1e-10) and conditioning; throws NumericalError.
  static ObliquePoint from_matrix(Matrix Q);
  static ObliquePoint identity(Index R);

 private:
  explicit ObliquePoint(Matrix Q) : Q_(std::move(Q)) {}
  Matrix Q_;
  friend ObliquePoint project_to_oblique(const Matrix& M);
};

[[nodiscard]] double reciprocal_condition(const Matrix& Q);

// Normalizes each column; zero columns or a singular result throw.
[[nodiscard]] ObliquePoint project_to_oblique(const Matrix& M);

// One tangent step from `from` toward `toward` followed by column-wise
// retraction. Throws NumericalError when the result is singular.
[[nodiscard]] ObliquePoint step(const ObliquePoint& from,
                                const ObliquePoint& toward, double s);

// Columns i.i.d. uniform on S^{R-1}; near-singular draws are resampled (at
// most 100 tries). `resamples`, when non-null, receives the retry count.
[[nodiscard]] ObliquePoint sample_uniform(Index R, std::mt19937_64& rng,
                                          int* resamples = nullptr);

// A = max(A_svd Q, 0), W = max(Q^-1 W_svd, 0) via a linear solve.
[[nodiscard]] Factorization q_to_factorization(const ObliquePoint& Q,
                                               const SvdPair& svd);

// argmin_Q ||A - A_svd Q|| followed by column normalization.
[[nodiscard]] ObliquePoint factorization_to_q(const Factorization& F,
                                              const SvdPair& svd);

[[nodiscard]] double distance(const ObliquePoint& a, const ObliquePoint& b);

}  // namespace bnmf
