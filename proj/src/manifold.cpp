#include "bnmf/manifold.hpp"

#include <cmath>

namespace bnmf {

double reciprocal_condition(const Matrix& Q) {
  Eigen::JacobiSVD<Matrix> svd(Q);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0.0;
  return s(s.size() - 1) / s(0);
}

ObliquePoint ObliquePoint::from_matrix(Matrix Q) {
  if (Q.rows() != Q.cols())
    throw DimensionError("oblique point must be square");
  for (Index i = 0; i < Q.cols(); ++i)
    if (std::abs(Q.col(i).norm() - 1.0) >= 1e-10)
      throw NumericalError("oblique point column is not unit norm");
  if (reciprocal_condition(Q) <= kMinReciprocalCondition)
    throw NumericalError("oblique point is singular");
  return ObliquePoint(std::move(Q));
}

ObliquePoint ObliquePoint::identity(Index R) {
  return ObliquePoint(Matrix::Identity(R, R));
}

ObliquePoint project_to_oblique(const Matrix& M) {
  if (M.rows() != M.cols())
    throw DimensionError("project_to_oblique: matrix must be square");
  Matrix Q = M;
  for (Index i = 0; i < Q.cols(); ++i) {
    const double n = Q.col(i).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericalError("project_to_oblique: zero column");
    Q.col(i) /= n;
  }
  if (reciprocal_condition(Q) <= kMinReciprocalCondition)
    throw NumericalError("project_to_oblique: singular result");
  return ObliquePoint(std::move(Q));
}

ObliquePoint step(const ObliquePoint& from, const ObliquePoint& toward,
                  double s) {
  if (!(s > 0.0)) throw std::invalid_argument("step size must be positive");
  if (from.rank() != toward.rank())
    throw DimensionError("step: endpoints have different rank");
  const Matrix& Q = from.matrix();
  const Matrix dir = toward.matrix() - Q;
  Matrix next(Q.rows(), Q.cols());
  for (Index i = 0; i < Q.cols(); ++i) {
    const auto q = Q.col(i);
    const Vector v = dir.col(i) - q.dot(dir.col(i)) * q;
    next.col(i) = q + s * v;
  }
  return project_to_oblique(next);
}

ObliquePoint sample_uniform(Index R, std::mt19937_64& rng, int* resamples) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Matrix M(R, R);
    for (Index j = 0; j < R; ++j)
      for (Index i = 0; i < R; ++i) M(i, j) = normal(rng);
    bool ok = true;
    for (Index j = 0; j < R; ++j) {
      const double n = M.col(j).norm();
      if (!(n > 0.0)) {
        ok = false;
        break;
      }
      M.col(j) /= n;
    }
    if (ok && reciprocal_condition(M) > kMinReciprocalCondition) {
      if (resamples) *resamples = attempt;
      return ObliquePoint::from_matrix(std::move(M));
    }
  }
  throw NumericalError("sample_uniform: 100 consecutive singular draws");
}

Factorization q_to_factorization(const ObliquePoint& Q, const SvdPair& svd) {
  const Matrix& q = Q.matrix();
  if (q.rows() != svd.A_svd.cols())
    throw DimensionError("q_to_factorization: rank mismatch");
  if (reciprocal_condition(q) <= kMinReciprocalCondition)
    throw NumericalError("q_to_factorization: Q is ill-conditioned");
  Factorization f;
  f.A = (svd.A_svd * q).cwiseMax(0.0);
  f.W = q.partialPivLu().solve(svd.W_svd).cwiseMax(0.0);
  return f;
}

ObliquePoint factorization_to_q(const Factorization& F, const SvdPair& svd) {
  if (F.A.rows() != svd.A_svd.rows() || F.A.cols() != svd.A_svd.cols())
    throw DimensionError("factorization_to_q: basis shape mismatch");
  const Matrix Q = svd.A_svd.colPivHouseholderQr().solve(F.A);
  return project_to_oblique(Q);
}

double distance(const ObliquePoint& a, const ObliquePoint& b) {
  return (a.matrix() - b.matrix()).norm();
}

}  // namespace bnmf
