#include "bnmf/nmf_solve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace bnmf {

SvdPair truncated_svd(const Matrix& X, Index R) {
  if (R < 1 || R > std::min(X.rows(), X.cols()))
    throw DimensionError("truncated_svd: rank must lie in [1, min(D,N)]");
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericalError("truncated_svd: SVD did not converge");
  SvdPair out;
  out.singular_values = svd.singularValues().head(R);
  out.A_svd = svd.matrixU().leftCols(R) * out.singular_values.asDiagonal();
  out.W_svd = svd.matrixV().leftCols(R).transpose();
  return out;
}

Factorization random_init(const Matrix& X, Index R, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double scale = std::sqrt(std::max(X.mean(), 0.0) / static_cast<double>(R));
  Factorization f{Matrix(X.rows(), R), Matrix(R, X.cols())};
  for (Index k = 0; k < R; ++k)
    for (Index d = 0; d < X.rows(); ++d) f.A(d, k) = (1.0 - unif(rng)) * scale;
  for (Index k = 0; k < R; ++k)
    for (Index n = 0; n < X.cols(); ++n) f.W(k, n) = (1.0 - unif(rng)) * scale;
  return f;
}

namespace {

double projected_norm(const Matrix& grad, const Matrix& H) {
  double s = 0.0;
  for (Index j = 0; j < H.cols(); ++j)
    for (Index i = 0; i < H.rows(); ++i)
      if (grad(i, j) < 0.0 || H(i, j) > 0.0) s += grad(i, j) * grad(i, j);
  return std::sqrt(s);
}

struct SubproblemResult {
  Matrix grad;
  int iterations{0};
};

// min_H>=0 0.5 ||V - W H||_F^2, started from H. Lin's nlssubprob.
SubproblemResult nls_subproblem(const Matrix& V, const Matrix& W, Matrix& H,
                                double tol, const LinOptions& opt) {
  const Matrix WtV = W.transpose() * V;
  const Matrix WtW = W.transpose() * W;
  double alpha = 1.0;
  SubproblemResult res;
  int iter = 1;
  for (; iter <= opt.max_inner_iter; ++iter) {
    res.grad = WtW * H - WtV;
    if (projected_norm(res.grad, H) <= tol) break;
    Matrix Hp = H;
    bool decrease_alpha = false;
    for (int inner = 1; inner <= 20; ++inner) {
      Matrix Hn = (H - alpha * res.grad).cwiseMax(0.0);
      const Matrix d = Hn - H;
      const double gradd = (res.grad.array() * d.array()).sum();
      const double dQd = ((WtW * d).array() * d.array()).sum();
      const bool suff = (1.0 - opt.sufficient_decrease) * gradd + 0.5 * dQd < 0.0;
      if (inner == 1) {
        decrease_alpha = !suff;
        Hp = H;
      }
      if (decrease_alpha) {
        if (suff) {
          H = std::move(Hn);
          break;
        }
        alpha *= opt.shrink;
      } else {
        if (!suff || Hp == Hn) {
          H = Hp;
          break;
        }
        alpha /= opt.shrink;
        Hp = std::move(Hn);
      }
    }
  }
  res.iterations = iter;
  return res;
}

}  // namespace

Factorization lin_pg_nmf(const Matrix& Xin, Index R, const Factorization& init,
                         const LinOptions& opt, LinTrace* trace) {
  if (init.A.rows() != Xin.rows() || init.W.cols() != Xin.cols() ||
      init.A.cols() != R || init.W.rows() != R)
    throw DimensionError("lin_pg_nmf: initialization has the wrong shape");
  std::size_t clipped = 0;
  Matrix X = Xin;
  for (Index j = 0; j < X.cols(); ++j)
    for (Index i = 0; i < X.rows(); ++i)
      if (X(i, j) < 0.0) {
        X(i, j) = 0.0;
        ++clipped;
      }

  Matrix A = init.A.cwiseMax(0.0);
  Matrix W = init.W.cwiseMax(0.0);
  Matrix gradA = A * (W * W.transpose()) - X * W.transpose();
  Matrix gradW = (A.transpose() * A) * W - A.transpose() * X;
  const double init_grad =
      std::sqrt(gradA.squaredNorm() + gradW.squaredNorm());
  // Gradients at round-off level of the data terms count as stationary, so an
  // exact factorization is returned untouched.
  const double floor_grad =
      1e-12 * ((X * W.transpose()).norm() + (A.transpose() * X).norm());
  double tolA = std::max(0.001, opt.tol) * init_grad;
  double tolW = tolA;

  LinTrace local;
  local.clipped_entries = clipped;
  int iter = 0;
  for (; iter < opt.max_iter; ++iter) {
    const double pg = std::sqrt(std::pow(projected_norm(gradA, A), 2) +
                                std::pow(projected_norm(gradW, W), 2));
    if (pg <= opt.tol * init_grad || pg <= floor_grad) {
      local.converged = true;
      break;
    }
    Matrix At = A.transpose();
    const Matrix Xt = X.transpose();
    const Matrix Wt = W.transpose();
    SubproblemResult ra = nls_subproblem(Xt, Wt, At, tolA, opt);
    A = At.transpose();
    gradA = ra.grad.transpose();
    if (ra.iterations == 1) tolA *= 0.1;
    SubproblemResult rw = nls_subproblem(X, A, W, tolW, opt);
    gradW = rw.grad;
    if (rw.iterations == 1) tolW *= 0.1;
    local.objective.push_back((X - A * W).squaredNorm());
  }
  local.iterations = iter;
  if (trace) *trace = std::move(local);
  return {std::move(A), std::move(W)};
}

Factorization lin_pg_nmf(const Matrix& X, Index R, std::uint64_t seed,
                         const LinOptions& options, LinTrace* trace) {
  return lin_pg_nmf(X, R, random_init(X, R, seed), options, trace);
}

std::vector<Factorization> lin_restarts(const Matrix& X, Index R,
                                        int n_restarts, std::uint64_t seed,
                                        const LinOptions& options) {
  if (n_restarts < 1) throw std::invalid_argument("need at least one restart");
  std::vector<Factorization> out;
  out.reserve(static_cast<std::size_t>(n_restarts));
  for (int i = 0; i < n_restarts; ++i)
    out.push_back(lin_pg_nmf(X, R, seed + static_cast<std::uint64_t>(i), options));
  return out;
}

EmpiricalNoise empirical_noise(const Matrix& X, std::vector<Factorization> fits,
                               NoiseEstimate estimate) {
  if (fits.empty()) throw std::invalid_argument("empirical_noise: no fits");
  const double DN = static_cast<double>(X.size());
  EmpiricalNoise out;
  double best = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (const auto& f : fits) {
    const Matrix E = X - f.A * f.W;
    const double mse = E.squaredNorm() / DN;
    best = std::min(best, mse);
    total += mse;
    out.eps = std::max(out.eps, E.cwiseAbs().maxCoeff());
  }
  switch (estimate) {
    case NoiseEstimate::first:
      out.sigma2 = (X - fits.front().A * fits.front().W).squaredNorm() / DN;
      break;
    case NoiseEstimate::best:
      out.sigma2 = best;
      break;
    case NoiseEstimate::mean:
      out.sigma2 = total / static_cast<double>(fits.size());
      break;
  }
  out.fits = std::move(fits);
  return out;
}

EmpiricalNoise empirical_noise(const Matrix& X, Index R, int n_restarts,
                               std::uint64_t seed, NoiseEstimate estimate,
                               const LinOptions& options) {
  return empirical_noise(X, lin_restarts(X, R, n_restarts, seed, options),
                         estimate);
}

}  // namespace bnmf
