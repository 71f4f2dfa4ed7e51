#pragma once

#include "bnmf/types.hpp"

#include <functional>
#include <optional>

namespace bnmf {

// Objective returning +inf (or NaN) outside its domain; the line search
// backtracks away from such points.
using Objective = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

struct NewtonCgOptions {
  int max_iter{200};
  double abs_tol{1e-4};      // stop on |f_k - f_{k+1}| < abs_tol
  double hv_step{1e-5};      // Hessian-vector FD step, scaled by (1 + ||x||)
  int cg_factor{10};         // inner CG iterations <= cg_factor * dim
  double cg_rel_tol{1e-4};   // inner CG stops at residual <= min(this, sqrt|g|) |g|
  int max_backtracks{60};
  double armijo{1e-4};
  std::optional<Vector> lower;  // optional elementwise lower bounds
};

struct NewtonCgResult {
  Vector x;
  double value{0.0};
  int iterations{0};
  bool converged{false};
};

// Truncated Newton minimization: CG on finite-difference Hessian-vector
// products of the supplied gradient, projected Armijo backtracking when
// lower bounds are present.
[[nodiscard]] NewtonCgResult newton_cg(const Objective& f,
                                       const GradientFn& grad, Vector x0,
                                       const NewtonCgOptions& options = {});

// Central differences with step h * (1 + |x_i|).
[[nodiscard]] Vector finite_difference_gradient(const Objective& f,
                                                const Vector& x,
                                                double h = 1e-6);

}  // namespace bnmf
