#include "bnmf/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bnmf {

namespace {

void project(Vector& x, const std::optional<Vector>& lower) {
  if (lower) x = x.cwiseMax(*lower);
}

Vector free_mask(const Vector& x, const Vector& g,
                 const std::optional<Vector>& lower) {
  Vector mask = Vector::Ones(x.size());
  if (!lower) return mask;
  for (Index i = 0; i < x.size(); ++i)
    if (x(i) <= (*lower)(i) && g(i) > 0.0) mask(i) = 0.0;
  return mask;
}

// Steihaug CG on H p = -g restricted to the free coordinates.
Vector cg_direction(const GradientFn& grad, const Vector& x, const Vector& g,
                    const Vector& mask, const NewtonCgOptions& opt) {
  const Vector gf = g.cwiseProduct(mask);
  const double gnorm = gf.norm();
  const double tol = std::min(opt.cg_rel_tol, std::sqrt(gnorm)) * gnorm;
  const double xscale = 1.0 + x.norm();
  auto hv = [&](const Vector& v) -> Vector {
    const double vn = v.norm();
    const double h = opt.hv_step * xscale / vn;
    Vector out = (grad(x + h * v) - grad(x - h * v)) / (2.0 * h);
    return out.cwiseProduct(mask);
  };
  Vector z = Vector::Zero(x.size());
  Vector r = -gf;
  Vector p = r;
  double rr = r.squaredNorm();
  const long max_cg = static_cast<long>(opt.cg_factor) * x.size();
  for (long k = 0; k < max_cg; ++k) {
    const Vector Hp = hv(p);
    const double pHp = p.dot(Hp);
    if (!(pHp > 0.0) || !std::isfinite(pHp)) return k == 0 ? Vector(-gf) : z;
    const double alpha = rr / pHp;
    z += alpha * p;
    r -= alpha * Hp;
    const double rr_new = r.squaredNorm();
    if (std::sqrt(rr_new) <= tol) break;
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return z;
}

}  // namespace

NewtonCgResult newton_cg(const Objective& f, const GradientFn& grad, Vector x0,
                         const NewtonCgOptions& opt) {
  NewtonCgResult res;
  project(x0, opt.lower);
  res.x = std::move(x0);
  res.value = f(res.x);
  if (!std::isfinite(res.value))
    throw std::invalid_argument("newton_cg: objective is not finite at the start");

  for (int it = 0; it < opt.max_iter; ++it) {
    res.iterations = it + 1;
    const Vector g = grad(res.x);
    const Vector mask = free_mask(res.x, g, opt.lower);
    if (g.cwiseProduct(mask).norm() == 0.0) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    Vector x_new;
    double f_new = 0.0;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vector p = attempt == 0 ? cg_direction(grad, res.x, g, mask, opt)
                              : Vector(-g.cwiseProduct(mask));
      if (g.dot(p) >= 0.0) p = -g.cwiseProduct(mask);
      double alpha = 1.0;
      for (int bt = 0; bt < opt.max_backtracks; ++bt, alpha *= 0.5) {
        x_new = res.x + alpha * p;
        project(x_new, opt.lower);
        f_new = f(x_new);
        if (std::isfinite(f_new) &&
            f_new <= res.value + opt.armijo * g.dot(x_new - res.x)) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double change = res.value - f_new;
    res.x = std::move(x_new);
    res.value = f_new;
    if (std::abs(change) < opt.abs_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

Vector finite_difference_gradient(const Objective& f, const Vector& x,
                                  double h) {
  Vector g(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double step = h * (1.0 + std::abs(x(i)));
    xp(i) = x(i) + step;
    const double fp = f(xp);
    xp(i) = x(i) - step;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

}  // namespace bnmf
