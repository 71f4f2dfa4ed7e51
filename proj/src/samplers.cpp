#include "bnmf/samplers.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace bnmf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform on the open interval (0, 1).
double open_uniform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v = 0.0;
  do {
    v = u(rng);
  } while (v <= 0.0);
  return v;
}

// Standard normal truncated to [a, inf).
double std_truncated(double a, std::mt19937_64& rng) {
  if (a <= 4.0) {
    const double u = open_uniform(rng);
    if (a < 0.0) {
      // Lower-tail form: Phi(z) = Phi(a) + u (1 - Phi(a)).
      const double phi_a = 0.5 * std::erfc(-a / std::numbers::sqrt2);
      const double p = phi_a + u * (1.0 - phi_a);
      return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
    }
    // Upper-tail form: Q(z) = u Q(a), accurate when Q(a) is small.
    const double q_a = 0.5 * std::erfc(a / std::numbers::sqrt2);
    return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u * q_a);
  }
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  std::exponential_distribution<double> ex(alpha);
  while (true) {
    const double z = a + ex(rng);
    const double rho = std::exp(-0.5 * (z - alpha) * (z - alpha));
    if (open_uniform(rng) <= rho) return z;
  }
}

double draw(const GaussianConditional& c, std::mt19937_64& rng) {
  if (c.prior_fallback) {
    std::exponential_distribution<double> ex(c.rate);
    return ex(rng);
  }
  return truncated_normal_sample(c.mean, c.var, rng);
}

}  // namespace

double truncated_normal_sample(double mean, double var, std::mt19937_64& rng) {
  if (!(var > 0.0)) throw std::invalid_argument("truncated_normal_sample: var must be > 0");
  const double sd = std::sqrt(var);
  const double z = std_truncated(-mean / sd, rng);
  return std::max(0.0, mean + sd * z);
}

double truncated_normal_mean(double mean, double var) {
  const double sd = std::sqrt(var);
  const double a = -mean / sd;
  double mills = 0.0;  // phi(a) / Q(a)
  if (a > 30.0) {
    mills = a + 1.0 / a - 2.0 / (a * a * a);
  } else {
    const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
    mills = phi / (0.5 * std::erfc(a / std::numbers::sqrt2));
  }
  return mean + sd * mills;
}

GaussianConditional gibbs_conditional_A(const Matrix& X, const Factorization& F,
                                        const ModelSpec& spec, Index d, Index k) {
  GaussianConditional c;
  c.rate = spec.rate_A(d, k);
  const double s = F.W.row(k).squaredNorm();
  if (s <= 0.0) {
    c.prior_fallback = true;
    return c;
  }
  const Vector excl =
      X.row(d).transpose() - (F.A.row(d) * F.W).transpose() + F.A(d, k) * F.W.row(k).transpose();
  c.mean = (F.W.row(k).dot(excl) - spec.sigma2 * c.rate) / s;
  c.var = spec.sigma2 / s;
  return c;
}

GaussianConditional gibbs_conditional_W(const Matrix& X, const Factorization& F,
                                        const ModelSpec& spec, Index k, Index n) {
  GaussianConditional c;
  c.rate = spec.rate_W(k, n);
  const double s = F.A.col(k).squaredNorm();
  if (s <= 0.0) {
    c.prior_fallback = true;
    return c;
  }
  const Vector excl = X.col(n) - F.A * F.W.col(n) + F.W(k, n) * F.A.col(k);
  c.mean = (F.A.col(k).dot(excl) - spec.sigma2 * c.rate) / s;
  c.var = spec.sigma2 / s;
  return c;
}

ChainState gibbs_step(const Matrix& X, ChainState state, const ModelSpec& spec,
                      GibbsSweep sweep) {
  if (!spec.is_gaussian())
    throw std::invalid_argument("gibbs_step: no conjugate sampler for the Uniform likelihood");
  Factorization& F = state.factorization;
  const Index D = F.A.rows();
  const Index R = F.A.cols();
  const Index N = F.W.cols();
  Matrix E = X - F.A * F.W;
  const double s2 = spec.sigma2;
  if (sweep.update_A) {
    for (Index k = 0; k < R; ++k) {
      const double ww = F.W.row(k).squaredNorm();
      for (Index d = 0; d < D; ++d) {
        const double old = F.A(d, k);
        GaussianConditional c;
        c.rate = spec.rate_A(d, k);
        if (ww <= 0.0) {
          c.prior_fallback = true;
        } else {
          // Residual with component k removed: E + old * W_k.
          const double num = E.row(d).dot(F.W.row(k)) + old * ww;
          c.mean = (num - s2 * c.rate) / ww;
          c.var = s2 / ww;
        }
        const double v = draw(c, state.rng);
        F.A(d, k) = v;
        E.row(d) -= (v - old) * F.W.row(k);
      }
    }
  }
  if (sweep.update_W) {
    for (Index k = 0; k < R; ++k) {
      const double aa = F.A.col(k).squaredNorm();
      for (Index n = 0; n < N; ++n) {
        const double old = F.W(k, n);
        GaussianConditional c;
        c.rate = spec.rate_W(k, n);
        if (aa <= 0.0) {
          c.prior_fallback = true;
        } else {
          const double num = E.col(n).dot(F.A.col(k)) + old * aa;
          c.mean = (num - s2 * c.rate) / aa;
          c.var = s2 / aa;
        }
        const double v = draw(c, state.rng);
        F.W(k, n) = v;
        E.col(n) -= (v - old) * F.A.col(k);
      }
    }
  }
  ++state.iteration;
  return state;
}

ChainReport gibbs_run(const Matrix& X, const ModelSpec& spec,
                      const Factorization& init, std::uint64_t seed,
                      const GibbsOptions& options, ProposalSink* sink) {
  if (!spec.is_gaussian())
    throw std::invalid_argument("gibbs_run: no conjugate sampler for the Uniform likelihood");
  if (!init.nonnegative()) throw std::invalid_argument("gibbs_run: init has negative entries");
  ChainState st{init, 0, std::mt19937_64(seed), 0.0};
  ChainReport rep;
  rep.log_joint_trace.reserve(options.n_samples);
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    st = gibbs_step(X, std::move(st), spec);
    rep.log_joint_trace.push_back(log_joint(X, st.factorization, spec));
    if (options.snapshot_thin > 0 && i % options.snapshot_thin == 0)
      rep.snapshots.push_back(st.factorization);
    ++rep.samples;
    if (sink && sink->propose(st.factorization)) ++rep.accepted_proposals;
  }
  rep.final_state = std::move(st);
  return rep;
}

HmcTransition hmc_transition(const NmfLogJoint& density, const Vector& theta,
                             double step, int leapfrog_steps,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = theta.size();
  Vector p(n);
  for (Index i = 0; i < n; ++i) p(i) = normal(rng);
  HmcTransition tr;
  const double f0 = density.value(theta);
  const double h0 = -f0 + 0.5 * p.squaredNorm();
  Vector x = theta;
  Vector g = density.gradient(x);
  bool hit_wall = false;
  for (int l = 0; l < leapfrog_steps; ++l) {
    p += 0.5 * step * g;
    x += step * p;
    if (!x.allFinite()) {  // diverged
      hit_wall = true;
      break;
    }
    for (Index i = 0; i < n; ++i)
      if (x(i) < 0.0) {
        x(i) = -x(i);
        p(i) = -p(i);
      }
    if (!density.box_feasible(x, 0.0)) {
      hit_wall = true;
      break;
    }
    g = density.gradient(x);
    p += 0.5 * step * g;
  }
  double h1 = kInf;
  if (!hit_wall) {
    const double f1 = density.value(x);
    if (std::isfinite(f1)) h1 = -f1 + 0.5 * p.squaredNorm();
  }
  tr.energy_change = h1 - h0;
  tr.accept_prob = std::isfinite(h1) ? std::min(1.0, std::exp(h0 - h1)) : 0.0;
  if (std::isnan(tr.accept_prob)) tr.accept_prob = 0.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  tr.accepted = u(rng) < tr.accept_prob;
  tr.theta = tr.accepted ? x : theta;
  return tr;
}

double hmc_initial_step(const NmfLogJoint& density, const Vector& theta,
                        std::mt19937_64& rng) {
  double h = 0.1;
  auto prob = [&](double s) { return hmc_transition(density, theta, s, 1, rng).accept_prob; };
  const bool up = prob(h) > 0.5;
  for (int i = 0; i < 60; ++i) {
    const double next = up ? 2.0 * h : 0.5 * h;
    const bool above = prob(next) > 0.5;
    h = next;
    if (above != up) break;
  }
  return h;
}

ChainReport hmc_run(const Matrix& X, const ModelSpec& spec,
                    const Factorization& init, std::uint64_t seed,
                    const HmcOptions& options, ProposalSink* sink) {
  const NmfLogJoint density(X, spec);
  if (!init.nonnegative()) throw std::invalid_argument("hmc_run: init has negative entries");
  if (!std::isfinite(log_joint(X, init, spec)))
    throw std::invalid_argument("hmc_run: init lies outside the likelihood support");
  ChainState st{init, 0, std::mt19937_64(seed), options.initial_step};
  Vector theta = flatten(init);
  double h = options.initial_step > 0.0 ? options.initial_step
                                        : hmc_initial_step(density, theta, st.rng);

  const auto n_adapt = static_cast<std::size_t>(
      std::ceil(options.adapt_fraction * static_cast<double>(options.n_samples)));
  // Dual-averaging stochastic approximation on log h.
  const double mu = std::log(10.0 * h);
  const double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double hbar = 0.0, log_h_avg = 0.0;
  double adapt_sum = 0.0, post_sum = 0.0;
  std::size_t post_count = 0;

  ChainReport rep;
  rep.log_joint_trace.reserve(options.n_samples);
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    const HmcTransition tr =
        hmc_transition(density, theta, h, options.leapfrog_steps, st.rng);
    theta = tr.theta;
    if (i < n_adapt) {
      adapt_sum += tr.accept_prob;
      const double t = static_cast<double>(i + 1);
      hbar = (1.0 - 1.0 / (t + t0)) * hbar +
             (options.target_acceptance - tr.accept_prob) / (t + t0);
      const double log_h = mu - std::sqrt(t) / gamma * hbar;
      const double eta = std::pow(t, -kappa);
      log_h_avg = eta * log_h + (1.0 - eta) * log_h_avg;
      h = (i + 1 == n_adapt) ? std::exp(log_h_avg) : std::exp(log_h);
      continue;
    }
    post_sum += tr.accept_prob;
    ++post_count;
    st.factorization = density.decode(theta);
    rep.log_joint_trace.push_back(density.value(theta));
    if (options.snapshot_thin > 0 && rep.samples % options.snapshot_thin == 0)
      rep.snapshots.push_back(st.factorization);
    ++rep.samples;
    if (sink && sink->propose(st.factorization)) ++rep.accepted_proposals;
  }
  st.factorization = density.decode(theta);
  st.iteration = options.n_samples;
  st.step_size = h;
  rep.adapt_acceptance = n_adapt > 0 ? adapt_sum / static_cast<double>(n_adapt) : 0.0;
  rep.acceptance = post_count > 0 ? post_sum / static_cast<double>(post_count) : 0.0;
  rep.step_size = h;
  rep.final_state = std::move(st);
  return rep;
}

void write_chain_trace(std::ostream& os, const ChainReport& report) {
  os << "sample,log_joint\n";
  const auto old = os.precision(17);
  for (std::size_t i = 0; i < report.log_joint_trace.size(); ++i)
    os << i << ',' << report.log_joint_trace[i] << '\n';
  os.precision(old);
}

}  // namespace bnmf
