#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bnmf/samplers.hpp"
#include "bnmf/vi.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

using namespace bnmf;
using bnmf::test::random_factorization;
using bnmf::test::random_uniform;

namespace {

constexpr double kPi = std::numbers::pi;

struct TruncMoments {
  double mean;
  double var;
};

// Moments of N(m, s^2) restricted to [0, inf), via the inverse Mills ratio.
TruncMoments truncated_moments(double m, double var) {
  const double s = std::sqrt(var);
  const double alpha = -m / s;
  const double phi = std::exp(-0.5 * alpha * alpha) / std::sqrt(2.0 * kPi);
  const double q = 0.5 * std::erfc(alpha / std::sqrt(2.0));
  const double lam = phi / q;
  return {m + s * lam, var * (1.0 + alpha * lam - lam * lam)};
}

// Standard error of a chain mean from 100 non-overlapping batches.
double batch_se(const std::vector<double>& x) {
  const std::size_t nb = 100, len = x.size() / nb;
  std::vector<double> means(nb);
  for (std::size_t b = 0; b < nb; ++b)
    means[b] = std::accumulate(x.begin() + static_cast<long>(b * len),
                               x.begin() + static_cast<long>((b + 1) * len), 0.0) /
               static_cast<double>(len);
  const double mu = std::accumulate(means.begin(), means.end(), 0.0) / nb;
  double ss = 0.0;
  for (double m : means) ss += (m - mu) * (m - mu);
  return std::sqrt(ss / (nb - 1) / nb);
}

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

class CountingSink final : public ProposalSink {
 public:
  bool propose(const Factorization& f) override {
    ++n_;
    all_nonnegative_ = all_nonnegative_ && f.nonnegative();
    return false;
  }
  std::size_t processed() const override { return n_; }
  bool all_nonnegative() const { return all_nonnegative_; }

 private:
  std::size_t n_{0};
  bool all_nonnegative_{true};
};

}  // namespace

TEST_CASE("truncated normal half-normal mean") {
  std::mt19937_64 rng(1);
  double s = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) s += truncated_normal_sample(0.0, 1.0, rng);
  CHECK(std::abs(s / n - std::sqrt(2.0 / kPi)) < 0.003);
}

TEST_CASE("truncated normal moments against analytic values") {
  std::mt19937_64 rng(2);
  const int n = 1000000;
  for (double m : {-10.0, -1.0, 0.0, 1.0, 5.0}) {
    CAPTURE(m);
    const TruncMoments t = truncated_moments(m, 1.0);
    CHECK(truncated_normal_mean(m, 1.0) == doctest::Approx(t.mean).epsilon(1e-10));
    double s = 0.0, s2 = 0.0, lo = 1e300;
    for (int i = 0; i < n; ++i) {
      const double x = truncated_normal_sample(m, 1.0, rng);
      s += x;
      s2 += x * x;
      lo = std::min(lo, x);
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    CHECK(lo >= 0.0);
    CHECK(std::abs(mean - t.mean) < 0.01 * t.mean);
    CHECK(std::abs(var - t.var) < 0.01 * t.var);
  }
}

TEST_CASE("truncated normal far from the boundary and bad variance") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) CHECK(std::abs(truncated_normal_sample(5.0, 1e-4, rng) - 5.0) < 0.06);
  CHECK_THROWS((void)truncated_normal_sample(0.0, 0.0, rng));
  CHECK_THROWS((void)truncated_normal_sample(0.0, -1.0, rng));
}

TEST_CASE("gibbs conditional plug-in and prior fallback") {
  const Matrix X = Matrix::Zero(1, 1);
  const Factorization F{Matrix::Constant(1, 1, 0.5), Matrix::Ones(1, 1)};
  const ModelSpec spec = ModelSpec::gaussian(1, 1, 1, 1.0, 1.0);
  const GaussianConditional c = gibbs_conditional_A(X, F, spec, 0, 0);
  CHECK_FALSE(c.prior_fallback);
  CHECK(c.mean == doctest::Approx(-1.0));
  CHECK(c.var == doctest::Approx(1.0));

  std::mt19937_64 rng(4);
  Factorization G = random_factorization(3, 4, 2, rng);
  G.W.row(1).setZero();
  const Matrix X2 = random_uniform(3, 4, rng);
  ModelSpec s2 = ModelSpec::gaussian(3, 4, 2, 0.5, 2.0);
  for (Index d = 0; d < 3; ++d) {
    const GaussianConditional p = gibbs_conditional_A(X2, G, s2, d, 1);
    CHECK(p.prior_fallback);
    CHECK(p.rate == 2.0);
  }
  // Entries of the A column with a zero W row are pure Exp(2) draws.
  ChainState st{G, 0, std::mt19937_64(5), 0.0};
  std::vector<double> draws;
  for (int i = 0; i < 20000; ++i) {
    st.factorization.W.row(1).setZero();
    st = gibbs_step(X2, std::move(st), s2, {true, false});
    for (Index d = 0; d < 3; ++d) draws.push_back(st.factorization.A(d, 1));
  }
  CHECK(std::abs(mean_of(draws) - 0.5) < 0.015);

  CHECK_THROWS((void)gibbs_step(X2, ChainState{G, 0, std::mt19937_64(1), 0.0},
                          ModelSpec::uniform(3, 4, 2, 1.0)));
}

TEST_CASE("gibbs 1x1x1 conditional matches the quadrature density") {
  const double x = 1.0, w = 1.0, sigma2 = 0.25, rate = 1.0;
  const Matrix X = Matrix::Constant(1, 1, x);
  const ModelSpec spec = ModelSpec::gaussian(1, 1, 1, sigma2, rate);
  auto density = [&](double a) {
    return std::exp(-rate * a - (x - a * w) * (x - a * w) / (2.0 * sigma2));
  };
  const double hi = 6.0;
  const int bins = 200;
  const double width = hi / bins;
  std::vector<double> p(bins);
  for (int b = 0; b < bins; ++b) {
    double s = 0.0;
    for (int k = 0; k < 100; ++k) s += density((b + (k + 0.5) / 100.0) * width);
    p[static_cast<std::size_t>(b)] = s;
  }
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= z;

  ChainState st{Factorization{Matrix::Constant(1, 1, 0.3), Matrix::Constant(1, 1, w)}, 0,
                std::mt19937_64(6), 0.0};
  std::vector<double> h(bins, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    st = gibbs_step(X, std::move(st), spec, {true, false});
    const double a = st.factorization.A(0, 0);
    const int b = std::min(bins - 1, static_cast<int>(a / width));
    h[static_cast<std::size_t>(b)] += 1.0 / n;
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) tv += 0.5 * std::abs(h[static_cast<std::size_t>(b)] - p[static_cast<std::size_t>(b)]);
  CHECK(tv < 0.02);
}

TEST_CASE("gibbs agrees with random-walk metropolis on a 2x2 rank-1 model") {
  Matrix X(2, 2);
  X << 1.0, 0.5, 0.8, 0.4;
  const double sigma2 = 0.5;
  const ModelSpec spec = ModelSpec::gaussian(2, 2, 1, sigma2, 1.0);
  auto log_target = [&](const Vector& t) {
    if ((t.array() < 0.0).any()) return -std::numeric_limits<double>::infinity();
    double ll = -t.sum();
    for (int d = 0; d < 2; ++d)
      for (int n = 0; n < 2; ++n) {
        const double r = X(d, n) - t(d) * t(2 + n);
        ll -= r * r / (2.0 * sigma2);
      }
    return ll;
  };
  const int n = 100000;
  std::vector<std::vector<double>> g(4), m(4);

  ChainState st{Factorization{Matrix::Ones(2, 1), Matrix::Constant(1, 2, 0.7)}, 0,
                std::mt19937_64(7), 0.0};
  for (int i = 0; i < n; ++i) {
    st = gibbs_step(X, std::move(st), spec);
    const Factorization& F = st.factorization;
    g[0].push_back(F.A(0, 0));
    g[1].push_back(F.A(1, 0));
    g[2].push_back(F.W(0, 0));
    g[3].push_back(F.W(0, 1));
  }

  std::mt19937_64 rng(8);
  std::normal_distribution<double> step(0.0, 0.35);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector t = (Vector(4) << 1.0, 1.0, 0.7, 0.7).finished();
  double lt = log_target(t);
  for (int i = 0; i < n; ++i) {
    for (int rep = 0; rep < 5; ++rep) {
      Vector prop = t;
      for (int k = 0; k < 4; ++k) prop(k) += step(rng);
      const double lp = log_target(prop);
      if (std::log(u(rng)) < lp - lt) {
        t = prop;
        lt = lp;
      }
    }
    for (int k = 0; k < 4; ++k) m[static_cast<std::size_t>(k)].push_back(t(k));
  }
  for (std::size_t k = 0; k < 4; ++k) {
    CAPTURE(k);
    const double se = std::hypot(batch_se(g[k]), batch_se(m[k]));
    CHECK(std::abs(mean_of(g[k]) - mean_of(m[k])) < 3.0 * se);
  }
}

TEST_CASE("hmc no-data limit recovers the exponential prior") {
  std::mt19937_64 rng(9);
  const Matrix X = random_uniform(2, 2, rng);
  const ModelSpec spec = ModelSpec::gaussian(2, 2, 1, 1e12, 1.0);
  HmcOptions opt;
  opt.n_samples = 110000;
  opt.snapshot_thin = 1;
  const ChainReport rep = hmc_run(X, spec, Factorization{Matrix::Ones(2, 1), Matrix::Ones(1, 2)},
                                  10, opt);
  REQUIRE(rep.snapshots.size() == 99000);
  for (int k = 0; k < 4; ++k) {
    std::vector<double> v;
    for (const auto& f : rep.snapshots) v.push_back(k < 2 ? f.A(k, 0) : f.W(0, k - 2));
    CAPTURE(k);
    CHECK(std::abs(mean_of(v) - 1.0) < 3.0 * batch_se(v));
  }
}

TEST_CASE("hmc zero leapfrog steps is the identity proposal") {
  std::mt19937_64 rng(11);
  const Factorization F = random_factorization(4, 3, 2, rng);
  const NmfLogJoint density(F.reconstruct(), ModelSpec::gaussian(4, 3, 2, 0.1));
  const Vector theta = flatten(F);
  for (int i = 0; i < 20; ++i) {
    const HmcTransition tr = hmc_transition(density, theta, 0.05, 0, rng);
    CHECK(tr.accepted);
    CHECK(tr.accept_prob == doctest::Approx(1.0));
    CHECK(tr.theta == theta);
  }
}

struct AdaptedInstance {
  Matrix X;
  ModelSpec spec;
  ChainReport report;
};

AdaptedInstance adapted_instance(std::uint64_t inst) {
  std::mt19937_64 rng(20 + inst);
  const Factorization truth = random_factorization(5, 5, 2, rng);
  Matrix X = (truth.reconstruct() + random_uniform(5, 5, rng, 0.0, 0.1)).eval();
  const ModelSpec spec = ModelSpec::gaussian(5, 5, 2, 0.01);
  ChainReport rep = hmc_run(X, spec, truth, 30 + inst);
  return {std::move(X), spec, std::move(rep)};
}

double median_drift(const AdaptedInstance& a, double step, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const NmfLogJoint density(a.X, a.spec);
  Vector theta = flatten(a.report.final_state.factorization);
  std::vector<double> drift;
  for (int i = 0; i < 100; ++i) {
    const HmcTransition tr = hmc_transition(density, theta, step, 20, rng);
    drift.push_back(std::abs(tr.energy_change));
    theta = tr.theta;
  }
  std::nth_element(drift.begin(), drift.begin() + 50, drift.end());
  return drift[50];
}

TEST_CASE("hmc adapted acceptance and energy drift on gaussian instances") {
  for (std::uint64_t inst = 0; inst < 3; ++inst) {
    CAPTURE(inst);
    const AdaptedInstance a = adapted_instance(inst);
    CHECK(a.report.acceptance >= 0.55);
    CHECK(a.report.acceptance <= 0.75);
    CHECK(a.report.adapt_acceptance > 0.0);
    const double h = a.report.step_size;
    const double d1 = median_drift(a, h, 60 + inst);
    CHECK(d1 < 0.1);
    // Leapfrog error is second order in the step.
    const double d4 = median_drift(a, h / 4.0, 60 + inst);
    CHECK(d4 < d1 / 8.0);
  }
}

TEST_CASE("samplers are deterministic, nonnegative and feed the sink") {
  std::mt19937_64 rng(40);
  const Factorization truth = random_factorization(4, 5, 2, rng);
  const Matrix X = truth.reconstruct();
  const ModelSpec spec = ModelSpec::gaussian(4, 5, 2, 0.05);

  GibbsOptions go;
  go.n_samples = 500;
  go.snapshot_thin = 1;
  CountingSink gs;
  const ChainReport g1 = gibbs_run(X, spec, truth, 3, go, &gs);
  const ChainReport g2 = gibbs_run(X, spec, truth, 3, go);
  CHECK(g1.log_joint_trace == g2.log_joint_trace);
  CHECK(g1.final_state.factorization.A == g2.final_state.factorization.A);
  CHECK(gs.processed() == 500);
  CHECK(gs.all_nonnegative());
  for (const auto& f : g1.snapshots) CHECK(f.nonnegative());

  HmcOptions ho;
  ho.n_samples = 500;
  ho.snapshot_thin = 1;
  CountingSink hs;
  const ChainReport h1 = hmc_run(X, spec, truth, 3, ho, &hs);
  const ChainReport h2 = hmc_run(X, spec, truth, 3, ho);
  CHECK(h1.log_joint_trace == h2.log_joint_trace);
  CHECK(h1.final_state.factorization.W == h2.final_state.factorization.W);
  CHECK(h1.step_size == h2.step_size);
  CHECK(hs.processed() == 450);
  CHECK(hs.all_nonnegative());
  for (const auto& f : h1.snapshots) CHECK(f.nonnegative());
}

TEST_CASE("hmc uniform likelihood: infeasible init throws, feasible chain stays inside") {
  std::mt19937_64 rng(50);
  const Factorization truth = random_factorization(4, 4, 2, rng);
  const Matrix X = truth.reconstruct();
  const ModelSpec spec = ModelSpec::uniform(4, 4, 2, 0.05);
  Factorization bad = truth;
  bad.A.array() += 1.0;
  CHECK_THROWS((void)hmc_run(X, spec, bad, 1));
  HmcOptions opt;
  opt.n_samples = 300;
  opt.snapshot_thin = 1;
  const ChainReport rep = hmc_run(X, spec, truth, 2, opt);
  for (const auto& f : rep.snapshots) CHECK(std::isfinite(log_joint(X, f, spec)));
}
