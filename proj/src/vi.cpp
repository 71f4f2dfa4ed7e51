#include "bnmf/vi.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

namespace bnmf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Matrix squared_distances(const VariationalMixture& mix) {
  const auto M = static_cast<Index>(mix.size());
  Matrix sq = Matrix::Zero(M, M);
  for (Index i = 0; i < M; ++i)
    for (Index j = i + 1; j < M; ++j) {
      const double v = (mix.components[static_cast<std::size_t>(i)].mu -
                        mix.components[static_cast<std::size_t>(j)].mu)
                           .squaredNorm();
      sq(i, j) = v;
      sq(j, i) = v;
    }
  return sq;
}

double log_normal_iso(double sqdist, double var, double dim) {
  return -0.5 * dim * (kLog2Pi + std::log(var)) - 0.5 * sqdist / var;
}
}  // namespace

void VariationalMixture::validate() const {
  if (components.empty()) return;
  const Index d = dim();
  double total = 0.0;
  for (const auto& c : components) {
    if (c.mu.size() != d) throw DimensionError("mixture dimension mismatch");
    if (!(c.sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be > 0");
    if (!(c.weight > 0.0 && c.weight <= 1.0))
      throw std::invalid_argument("weights must lie in (0, 1]");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("mixture weights must sum to 1");
}

VariationalMixture VariationalMixture::uniform(std::vector<Vector> mus,
                                               std::vector<double> sigma2s) {
  if (mus.size() != sigma2s.size())
    throw DimensionError("uniform mixture: size mismatch");
  VariationalMixture mix;
  const double w = 1.0 / static_cast<double>(mus.size());
  for (std::size_t i = 0; i < mus.size(); ++i)
    mix.components.push_back({std::move(mus[i]), sigma2s[i], w});
  return mix;
}

NmfLogJoint::NmfLogJoint(Matrix X, ModelSpec spec)
    : X_(std::move(X)), spec_(std::move(spec)) {
  spec_.validate();
  if (X_.rows() != spec_.D || X_.cols() != spec_.N)
    throw DimensionError("NmfLogJoint: data matrix is not D x N");
}

Index NmfLogJoint::dim() const {
  return parameter_count(spec_.D, spec_.N, spec_.R);
}

Factorization NmfLogJoint::decode(const Vector& theta) const {
  return bnmf::decode(theta, spec_.D, spec_.N, spec_.R);
}

double NmfLogJoint::value(const Vector& theta) const {
  return log_joint(X_, decode(theta), spec_);
}

Vector NmfLogJoint::gradient(const Vector& theta) const {
  const Factorization F = decode(theta);
  if (spec_.is_gaussian()) {
    const Gradient g = grad_log_joint(X_, F, spec_);
    return flatten({g.A, g.W});
  }
  // Inside the Uniform support only the prior has a gradient; outside it the
  // value is -inf and the gradient is never used for a step.
  return flatten({-spec_.rate_A, -spec_.rate_W});
}

double NmfLogJoint::hessian_trace(const Vector& theta) const {
  if (!spec_.is_gaussian()) return 0.0;
  return hessian_trace_gaussian(decode(theta), spec_);
}

Vector NmfLogJoint::hessian_trace_gradient(const Vector& theta) const {
  if (!spec_.is_gaussian()) return Vector::Zero(dim());
  const Factorization F = decode(theta);
  const double N = static_cast<double>(spec_.N);
  const double D = static_cast<double>(spec_.D);
  return flatten({(-2.0 * N / spec_.sigma2) * F.A, (-2.0 * D / spec_.sigma2) * F.W});
}

bool NmfLogJoint::box_feasible(const Vector& theta, double radius) const {
  if (spec_.is_gaussian()) return true;
  const Vector shift = Vector::Constant(theta.size(), radius);
  return uniform_feasible(X_, decode(theta), spec_.eps) &&
         uniform_feasible(X_, decode(theta + shift), spec_.eps) &&
         uniform_feasible(X_, decode(theta - shift), spec_.eps);
}

double entropy_lower_bound(const Matrix& sqdist, const Vector& sigma2,
                           const Vector& weights, Index dim) {
  const Index M = weights.size();
  const double d = static_cast<double>(dim);
  double h = 0.0;
  std::vector<double> terms(static_cast<std::size_t>(M));
  for (Index m = 0; m < M; ++m) {
    if (weights(m) <= 0.0) continue;
    double mx = -kInf;
    for (Index j = 0; j < M; ++j) {
      const double t =
          weights(j) > 0.0
              ? std::log(weights(j)) +
                    log_normal_iso(sqdist(m, j), sigma2(m) + sigma2(j), d)
              : -kInf;
      terms[static_cast<std::size_t>(j)] = t;
      mx = std::max(mx, t);
    }
    double s = 0.0;
    for (Index j = 0; j < M; ++j) s += std::exp(terms[static_cast<std::size_t>(j)] - mx);
    h -= weights(m) * (mx + std::log(s));
  }
  return h;
}

double entropy_lower_bound(const VariationalMixture& mix) {
  const auto M = static_cast<Index>(mix.size());
  Vector s2(M), w(M);
  for (Index m = 0; m < M; ++m) {
    s2(m) = mix.components[static_cast<std::size_t>(m)].sigma2;
    w(m) = mix.components[static_cast<std::size_t>(m)].weight;
  }
  return entropy_lower_bound(squared_distances(mix), s2, w, mix.dim());
}

double expected_log_joint(const VariationalMixture& mix,
                          const LogDensity& density) {
  double total = 0.0;
  for (const auto& c : mix.components) {
    const double f = density.value(c.mu);
    if (!std::isfinite(f)) return -kInf;
    const double tr = density.has_curvature() ? density.hessian_trace(c.mu) : 0.0;
    total += c.weight * (f + 0.5 * c.sigma2 * tr);
  }
  return total;
}

double expected_log_joint(const VariationalMixture& mix, const Matrix& X,
                          const ModelSpec& spec) {
  return expected_log_joint(mix, NmfLogJoint(X, spec));
}

double elbo(const VariationalMixture& mix, const LogDensity& density) {
  const double e = expected_log_joint(mix, density);
  if (!std::isfinite(e)) return e;
  return entropy_lower_bound(mix) + e;
}

double elbo(const VariationalMixture& mix, const Matrix& X,
            const ModelSpec& spec) {
  return elbo(mix, NmfLogJoint(X, spec));
}

double max_box_radius(const LogDensity& density, const Vector& theta) {
  if (density.has_curvature()) return kInf;
  if (!density.box_feasible(theta, 0.0)) return 0.0;
  double lo = 0.0;
  double hi = 1e-6 * (1.0 + theta.cwiseAbs().maxCoeff());
  int grow = 0;
  while (density.box_feasible(theta, hi)) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 200) return kInf;
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (density.box_feasible(theta, mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

Vector elbo_gradient(const VariationalMixture& mix, const LogDensity& density) {
  const auto M = static_cast<Index>(mix.size());
  const Index d = mix.dim();
  const double dd = static_cast<double>(d);
  Vector grad = Vector::Zero(M * d + M);
  const Matrix sq = squared_distances(mix);
  // Responsibilities resp(m, j) = w_j N_mj / sum_i w_i N_mi.
  Matrix resp(M, M);
  for (Index m = 0; m < M; ++m) {
    Vector t(M);
    for (Index j = 0; j < M; ++j) {
      const auto& cj = mix.components[static_cast<std::size_t>(j)];
      t(j) = std::log(cj.weight) +
             log_normal_iso(sq(m, j),
                            mix.components[static_cast<std::size_t>(m)].sigma2 + cj.sigma2,
                            dd);
    }
    const double mx = t.maxCoeff();
    const Vector e = (t.array() - mx).exp();
    resp.row(m) = (e / e.sum()).transpose();
  }
  for (Index a = 0; a < M; ++a) {
    const auto& ca = mix.components[static_cast<std::size_t>(a)];
    auto gmu = grad.segment(a * d, d);
    double gs2 = 0.0;
    for (Index j = 0; j < M; ++j) {
      const auto& cj = mix.components[static_cast<std::size_t>(j)];
      const double v = ca.sigma2 + cj.sigma2;
      const double c = ca.weight * resp(a, j) + cj.weight * resp(j, a);
      if (j != a) gmu += (c / v) * (ca.mu - cj.mu);
      const double dlogn_dv = -0.5 * dd / v + 0.5 * sq(a, j) / (v * v);
      gs2 -= c * dlogn_dv;
    }
    // Expected log joint.
    gmu += ca.weight * density.gradient(ca.mu);
    double tr = 0.0;
    if (density.has_curvature()) {
      tr = density.hessian_trace(ca.mu);
      gmu += ca.weight * 0.5 * ca.sigma2 * density.hessian_trace_gradient(ca.mu);
    }
    gs2 += ca.weight * 0.5 * tr;
    grad(M * d + a) = ca.sigma2 * gs2;
  }
  return grad;
}

namespace {

VariationalMixture unpack(const Vector& x, Index M, Index d) {
  VariationalMixture mix;
  const double w = 1.0 / static_cast<double>(M);
  for (Index m = 0; m < M; ++m)
    mix.components.push_back({x.segment(m * d, d), std::exp(x(M * d + m)), w});
  return mix;
}

}  // namespace

NviResult nvi_fit(const LogDensity& density, const std::vector<Vector>& init_mus,
                  const NviOptions& options) {
  if (init_mus.empty()) throw std::invalid_argument("nvi_fit: M must be >= 1");
  const auto M = static_cast<Index>(init_mus.size());
  const Index d = density.dim();
  Vector x0(M * d + M);
  for (Index m = 0; m < M; ++m) {
    const Vector& mu = init_mus[static_cast<std::size_t>(m)];
    if (mu.size() != d) throw DimensionError("nvi_fit: init has wrong length");
    x0.segment(m * d, d) = mu;
    double s2 = 1.0;
    if (density.has_curvature()) {
      const double tr = density.hessian_trace(mu);
      s2 = tr < 0.0 ? -static_cast<double>(d) / tr : 1.0;
    } else {
      const double r = max_box_radius(density, mu);
      if (!(r > 0.0))
        throw std::invalid_argument("nvi_fit: initialization is infeasible");
      s2 = std::isfinite(r) ? 0.25 * r * r : 1.0;
    }
    x0(M * d + m) = std::log(s2);
  }

  auto objective = [&](const Vector& x) -> double {
    const VariationalMixture mix = unpack(x, M, d);
    for (const auto& c : mix.components)
      if (!std::isfinite(c.sigma2) || !(c.sigma2 > 0.0) ||
          !density.box_feasible(c.mu, std::sqrt(c.sigma2)))
        return kInf;
    const double e = elbo(mix, density);
    return std::isfinite(e) ? -e : kInf;
  };
  GradientFn gradient;
  if (options.analytic_gradient) {
    gradient = [&](const Vector& x) -> Vector {
      return -elbo_gradient(unpack(x, M, d), density);
    };
  } else {
    gradient = [&](const Vector& x) -> Vector {
      return finite_difference_gradient(objective, x);
    };
  }

  NewtonCgOptions opt = options.optimizer;
  opt.max_iter = options.max_iter;
  opt.abs_tol = options.abs_tol;
  if (auto lb = density.lower_bound()) {
    Vector lower = Vector::Constant(M * d + M, -kInf);
    lower.head(M * d).setConstant(*lb);
    opt.lower = lower;
  }
  const NewtonCgResult r = newton_cg(objective, gradient, x0, opt);
  NviResult out;
  out.mixture = unpack(r.x, M, d);
  out.elbo = -r.value;
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

NviResult nvi_fit(const Matrix& X, const ModelSpec& spec,
                  const std::vector<Factorization>& init,
                  const NviOptions& options) {
  const NmfLogJoint density(X, spec);
  std::vector<Vector> mus;
  mus.reserve(init.size());
  for (const auto& f : init) mus.push_back(flatten(f));
  return nvi_fit(density, mus, options);
}

void write_mixture(std::ostream& os, const MixtureRecord& record) {
  nlohmann::json j;
  j["format"] = "bnmf-mixture";
  j["version"] = 1;
  j["D"] = record.D;
  j["N"] = record.N;
  j["R"] = record.R;
  j["layout"] = "A_col_major_then_W_row_major";
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : record.mixture.components) {
    nlohmann::json cj;
    cj["w"] = c.weight;
    cj["sigma2"] = c.sigma2;
    cj["mu"] = std::vector<double>(c.mu.data(), c.mu.data() + c.mu.size());
    comps.push_back(std::move(cj));
  }
  j["components"] = std::move(comps);
  os << j.dump() << '\n';
}

MixtureRecord read_mixture(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("mixture file is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "bnmf-mixture")
    throw std::runtime_error("not a bnmf mixture record");
  if (j.value("version", 0) != 1)
    throw std::runtime_error("unsupported mixture record version");
  if (j.value("layout", "") != "A_col_major_then_W_row_major")
    throw std::runtime_error("unsupported parameter layout");
  MixtureRecord rec;
  rec.D = j.at("D").get<Index>();
  rec.N = j.at("N").get<Index>();
  rec.R = j.at("R").get<Index>();
  const Index d = parameter_count(rec.D, rec.N, rec.R);
  for (const auto& cj : j.at("components")) {
    const auto mu = cj.at("mu").get<std::vector<double>>();
    if (static_cast<Index>(mu.size()) != d)
      throw std::runtime_error("mixture component has the wrong length");
    MixtureComponent c;
    c.mu = Eigen::Map<const Vector>(mu.data(), d);
    c.sigma2 = cj.at("sigma2").get<double>();
    c.weight = cj.at("w").get<double>();
    rec.mixture.components.push_back(std::move(c));
  }
  return rec;
}

}  // namespace bnmf
