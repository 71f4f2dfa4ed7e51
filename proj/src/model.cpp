#include "bnmf/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace bnmf {

Vector flatten(const Factorization& f) {
  const Index D = f.A.rows();
  const Index R = f.A.cols();
  const Index N = f.W.cols();
  Vector theta(parameter_count(D, N, R));
  Index pos = 0;
  for (Index k = 0; k < R; ++k)
    for (Index d = 0; d < D; ++d) theta(pos++) = f.A(d, k);
  for (Index k = 0; k < R; ++k)
    for (Index n = 0; n < N; ++n) theta(pos++) = f.W(k, n);
  return theta;
}

Factorization unflatten(const Vector& theta, Index D, Index N, Index R) {
  if (theta.size() != parameter_count(D, N, R))
    throw DimensionError("parameter vector length does not match R*(D+N)");
  Factorization f{Matrix(D, R), Matrix(R, N)};
  Index pos = 0;
  for (Index k = 0; k < R; ++k)
    for (Index d = 0; d < D; ++d) f.A(d, k) = theta(pos++);
  for (Index k = 0; k < R; ++k)
    for (Index n = 0; n < N; ++n) f.W(k, n) = theta(pos++);
  return f;
}

Factorization decode(const Vector& theta, Index D, Index N, Index R) {
  Factorization f = unflatten(theta, D, N, R);
  f.A = f.A.cwiseMax(0.0);
  f.W = f.W.cwiseMax(0.0);
  return f;
}

ModelSpec ModelSpec::gaussian(Index D, Index N, Index R, double sigma2,
                              double rate) {
  ModelSpec s;
  s.D = D;
  s.N = N;
  s.R = R;
  s.likelihood = LikelihoodKind::gaussian;
  s.sigma2 = sigma2;
  s.rate_A = Matrix::Constant(D, R, rate);
  s.rate_W = Matrix::Constant(R, N, rate);
  return s;
}

ModelSpec ModelSpec::uniform(Index D, Index N, Index R, double eps,
                             double rate) {
  ModelSpec s = gaussian(D, N, R, 1.0, rate);
  s.likelihood = LikelihoodKind::uniform;
  s.eps = eps;
  return s;
}

void ModelSpec::validate() const {
  if (D <= 0 || N <= 0 || R <= 0)
    throw DimensionError("model dimensions must be positive");
  if (rate_A.rows() != D || rate_A.cols() != R)
    throw DimensionError("rate_A must be D x R");
  if (rate_W.rows() != R || rate_W.cols() != N)
    throw DimensionError("rate_W must be R x N");
  if (!((rate_A.array() > 0.0).all() && (rate_W.array() > 0.0).all()))
    throw std::invalid_argument("prior rates must be strictly positive");
  if (is_gaussian() && !(sigma2 > 0.0))
    throw std::invalid_argument("Gaussian likelihood needs sigma2 > 0");
  if (!is_gaussian() && !(eps > 0.0))
    throw std::invalid_argument("Uniform likelihood needs eps > 0");
}

namespace {

void check_shapes(const Matrix& X, const Factorization& F,
                  const ModelSpec& spec) {
  if (X.rows() != spec.D || X.cols() != spec.N)
    throw DimensionError("data matrix is not D x N");
  if (F.A.rows() != spec.D || F.A.cols() != spec.R || F.W.rows() != spec.R ||
      F.W.cols() != spec.N)
    throw DimensionError("factorization dimensions disagree with the model");
}

double log_prior(const Factorization& F, const ModelSpec& spec) {
  return spec.rate_A.array().log().sum() - (spec.rate_A.array() * F.A.array()).sum() +
         spec.rate_W.array().log().sum() - (spec.rate_W.array() * F.W.array()).sum();
}

}  // namespace

double max_abs_residual(const Matrix& X, const Factorization& F) {
  return (X - F.A * F.W).cwiseAbs().maxCoeff();
}

bool uniform_feasible(const Matrix& X, const Factorization& F, double eps) {
  return max_abs_residual(X, F) < eps;
}

double log_joint(const Matrix& X, const Factorization& F,
                 const ModelSpec& spec) {
  check_shapes(X, F, spec);
  if (!F.nonnegative())
    throw std::invalid_argument("log_joint: factorization has negative entries");
  const double DN = static_cast<double>(spec.D * spec.N);
  double lik = 0.0;
  if (spec.is_gaussian()) {
    const double sq = (X - F.A * F.W).squaredNorm();
    lik = -0.5 * DN * std::log(2.0 * std::numbers::pi * spec.sigma2) -
          0.5 * sq / spec.sigma2;
  } else {
    if (!uniform_feasible(X, F, spec.eps))
      return -std::numeric_limits<double>::infinity();
    lik = -DN * std::log(2.0 * spec.eps);
  }
  return lik + log_prior(F, spec);
}

Gradient grad_log_joint(const Matrix& X, const Factorization& F,
                        const ModelSpec& spec) {
  check_shapes(X, F, spec);
  if (spec.is_gaussian()) {
    const Matrix E = X - F.A * F.W;
    return {(E * F.W.transpose()) / spec.sigma2 - spec.rate_A,
            (F.A.transpose() * E) / spec.sigma2 - spec.rate_W};
  }
  if (!uniform_feasible(X, F, spec.eps))
    throw NumericalError("gradient undefined outside the Uniform support");
  return {-spec.rate_A, -spec.rate_W};
}

double hessian_trace_gaussian(const Factorization& F, const ModelSpec& spec) {
  if (!spec.is_gaussian())
    throw std::invalid_argument(
        "hessian_trace_gaussian: Uniform likelihood has no curvature");
  const double N = static_cast<double>(F.W.cols());
  const double D = static_cast<double>(F.A.rows());
  return -(N * F.A.squaredNorm() + D * F.W.squaredNorm()) / spec.sigma2;
}

namespace {

struct ScaleTerms {
  Vector col_norm;  // ||A_k||
  double K{0.0};    // tr((AS)^T AS) = R
  double T{0.0};    // tr((S^-1 W)(S^-1 W)^T)
};

ScaleTerms scale_terms(const Factorization& F) {
  ScaleTerms t;
  t.col_norm = F.A.colwise().norm().transpose();
  if ((t.col_norm.array() <= 0.0).any())
    throw NumericalError("optimize_scale: zero column in A");
  t.K = static_cast<double>(F.A.cols());
  t.T = (t.col_norm.asDiagonal() * F.W).squaredNorm();
  return t;
}

}  // namespace

double scale_objective_value(const Factorization& F, const ModelSpec& spec,
                             double beta) {
  const ScaleTerms t = scale_terms(F);
  const double N = static_cast<double>(F.W.cols());
  const double D = static_cast<double>(F.A.rows());
  const double sigma2 = spec.is_gaussian() ? spec.sigma2 : 1.0;
  if (spec.scale_objective == ScaleObjective::as_displayed)
    return -(beta * N * t.K + (D / beta) * t.T) / sigma2;
  return -(beta * beta * N * t.K + (D / (beta * beta)) * t.T) / sigma2;
}

ScaleResult optimize_scale(const Factorization& F, const ModelSpec& spec) {
  if (!spec.is_gaussian())
    throw std::invalid_argument("optimize_scale requires a Gaussian likelihood");
  const ScaleTerms t = scale_terms(F);
  const double N = static_cast<double>(F.W.cols());
  const double D = static_cast<double>(F.A.rows());
  const double ratio = (D * t.T) / (N * t.K);
  const double beta = spec.scale_objective == ScaleObjective::as_displayed
                          ? std::sqrt(ratio)
                          : std::sqrt(std::sqrt(ratio));
  ScaleResult out;
  out.beta = beta;
  const Vector inv = t.col_norm.cwiseInverse();
  out.rescaled.A = beta * (F.A * inv.asDiagonal());
  out.rescaled.W = (1.0 / beta) * (t.col_norm.asDiagonal() * F.W);
  return out;
}

}  // namespace bnmf
