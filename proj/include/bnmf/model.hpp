#pragma once

#include "bnmf/types.hpp"

#include <utility>

namespace bnmf {

enum class LikelihoodKind { gaussian, uniform };

// How optimize_scale scores a rescaling (beta*A*S, S^-1*W/beta).
//   as_displayed : beta*N*K + (D/beta)*T   -> beta* = sqrt(D*T/(N*K))
//   beta_squared : beta^2*N*K + (D/beta^2)*T -> beta* = (D*T/(N*K))^(1/4)
enum class ScaleObjective { as_displayed, beta_squared };

// Bayesian NMF model: exponential priors on every entry of A and W plus a
// Gaussian (variance sigma2) or Uniform (half-width eps) likelihood.
struct ModelSpec {
  Index D{0};
  Index N{0};
  Index R{0};
  LikelihoodKind likelihood{LikelihoodKind::gaussian};
  double sigma2{1.0};
  double eps{1.0};
  Matrix rate_A;  // D x R, strictly positive
  Matrix rate_W;  // R x N, strictly positive
  ScaleObjective scale_objective{ScaleObjective::as_displayed};

  static ModelSpec gaussian(Index D, Index N, Index R, double sigma2,
                            double rate = 1.0);
  static ModelSpec uniform(Index D, Index N, Index R, double eps,
                           double rate = 1.0);

  [[nodiscard]] bool is_gaussian() const {
    return likelihood == LikelihoodKind::gaussian;
  }
  // Throws DimensionError / std::invalid_argument on a malformed spec.
  void validate() const;
};

// log p(X, A, W). Returns -inf for a Uniform likelihood when any residual
// satisfies |X - AW| >= eps.
[[nodiscard]] double log_joint(const Matrix& X, const Factorization& F,
                               const ModelSpec& spec);

// Largest absolute residual max |X - AW|.
[[nodiscard]] double max_abs_residual(const Matrix& X, const Factorization& F);

// True when every residual lies strictly inside (-eps, eps).
[[nodiscard]] bool uniform_feasible(const Matrix& X, const Factorization& F,
                                    double eps);

struct Gradient {
  Matrix A;
  Matrix W;
};

// Gradient of log_joint with respect to A and W. Under the Uniform likelihood
// only the prior contributes, and an infeasible F raises NumericalError.
[[nodiscard]] Gradient grad_log_joint(const Matrix& X, const Factorization& F,
                                      const ModelSpec& spec);

// Trace of the Gaussian log-likelihood Hessian:
// -(N tr(A^T A) + D tr(W W^T)) / sigma2. Priors add no curvature.
[[nodiscard]] double hessian_trace_gaussian(const Factorization& F,
                                            const ModelSpec& spec);

struct ScaleResult {
  double beta{1.0};
  Factorization rescaled;
};

// Normalizes A to unit Euclidean columns (S), then applies the beta that
// maximizes the Hessian-trace objective selected by spec.scale_objective.
// The product A*W is preserved.
[[nodiscard]] ScaleResult optimize_scale(const Factorization& F,
                                         const ModelSpec& spec);

// The scalar objective optimize_scale maximizes, evaluated at beta.
[[nodiscard]] double scale_objective_value(const Factorization& F,
                                           const ModelSpec& spec, double beta);

}  // namespace bnmf
