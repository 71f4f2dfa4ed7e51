#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bnmf/nmf_solve.hpp"
#include "bnmf/vi.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace bnmf;
using bnmf::test::random_factorization;
using bnmf::test::random_uniform;

namespace {

constexpr double kPi = std::numbers::pi;

// f(theta) = -||theta||^2 / 2.
class Quadratic final : public LogDensity {
 public:
  explicit Quadratic(Index d) : d_(d) {}
  Index dim() const override { return d_; }
  double value(const Vector& t) const override { return -0.5 * t.squaredNorm(); }
  Vector gradient(const Vector& t) const override { return -t; }
  double hessian_trace(const Vector&) const override { return -static_cast<double>(d_); }
  Vector hessian_trace_gradient(const Vector&) const override { return Vector::Zero(d_); }

 private:
  Index d_;
};

// 1-D toy: theta ~ Exp(rate), x | theta ~ N(theta, s2).
class ConjugateToy final : public LogDensity {
 public:
  ConjugateToy(double x, double s2, double rate) : x_(x), s2_(s2), rate_(rate) {}
  Index dim() const override { return 1; }
  double value(const Vector& t) const override { return scalar(t(0)); }
  Vector gradient(const Vector& t) const override {
    return Vector::Constant(1, (x_ - t(0)) / s2_ - rate_);
  }
  double hessian_trace(const Vector&) const override { return -1.0 / s2_; }
  Vector hessian_trace_gradient(const Vector&) const override { return Vector::Zero(1); }
  std::optional<double> lower_bound() const override { return 0.0; }

  double scalar(double t) const {
    return std::log(rate_) - rate_ * t - 0.5 * std::log(2.0 * kPi * s2_) -
           (x_ - t) * (x_ - t) / (2.0 * s2_);
  }

 private:
  double x_, s2_, rate_;
};

double log_normal_density(const Vector& x, const Vector& mu, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * kPi * var) - (x - mu).squaredNorm() / (2.0 * var);
}

double log_mixture_density(const VariationalMixture& mix, const Vector& x) {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  for (const auto& c : mix.components) {
    terms.push_back(std::log(c.weight) + log_normal_density(x, c.mu, c.sigma2));
    mx = std::max(mx, terms.back());
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

struct McEntropy {
  double mean;
  double stderr_;
};

McEntropy monte_carlo_entropy(const VariationalMixture& mix, int n, std::mt19937_64& rng) {
  std::vector<double> w;
  for (const auto& c : mix.components) w.push_back(c.weight);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::normal_distribution<double> z(0.0, 1.0);
  const Index d = mix.dim();
  double s = 0.0, s2 = 0.0;
  Vector x(d);
  for (int i = 0; i < n; ++i) {
    const auto& c = mix.components[static_cast<std::size_t>(pick(rng))];
    for (Index k = 0; k < d; ++k) x(k) = c.mu(k) + std::sqrt(c.sigma2) * z(rng);
    const double v = -log_mixture_density(mix, x);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  return {mean, std::sqrt((s2 / n - mean * mean) / n)};
}

VariationalMixture random_mixture(Index d, int M, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VariationalMixture mix;
  double total = 0.0;
  for (int m = 0; m < M; ++m) {
    MixtureComponent c;
    c.mu = Vector(d);
    for (Index k = 0; k < d; ++k) c.mu(k) = 3.0 * (u(rng) - 0.5);
    c.sigma2 = 0.05 + u(rng);
    c.weight = 0.1 + u(rng);
    total += c.weight;
    mix.components.push_back(std::move(c));
  }
  for (auto& c : mix.components) c.weight /= total;
  return mix;
}

// The uniform-weight bound written out term by term.
double eq2_verbatim(const VariationalMixture& mix) {
  const double M = static_cast<double>(mix.size());
  double h = 0.0;
  for (const auto& a : mix.components) {
    double inner = 0.0;
    for (const auto& b : mix.components)
      inner += std::exp(log_normal_density(a.mu, b.mu, a.sigma2 + b.sigma2)) / M;
    h -= std::log(inner) / M;
  }
  return h;
}

struct UniformProblem {
  Matrix X;
  ModelSpec spec;
  Factorization fit;
};

UniformProblem uniform_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Factorization truth = random_factorization(5, 4, 2, rng, 0.3, 1.0);
  Matrix X = truth.reconstruct() + random_uniform(5, 4, rng, -0.02, 0.02);
  X = X.cwiseMax(0.0);
  const Factorization fit = lin_pg_nmf(X, 2, seed);
  const double eps = 1.5 * max_abs_residual(X, fit) + 1e-3;
  return {X, ModelSpec::uniform(5, 4, 2, eps), fit};
}

}  // namespace

TEST_CASE("entropy bound single component closed form") {
  for (Index d : {1, 2, 5, 10}) {
    for (double s2 : {0.01, 1.0, 7.5}) {
      VariationalMixture mix = VariationalMixture::uniform({Vector::Zero(d)}, {s2});
      const double closed = 0.5 * static_cast<double>(d) * std::log(4.0 * kPi * s2);
      CHECK(std::abs(entropy_lower_bound(mix) - closed) < 1e-9);
    }
  }
}

TEST_CASE("entropy bound duplicate components equal one component") {
  const Vector mu = Vector::LinSpaced(3, 0.0, 1.0);
  const auto one = VariationalMixture::uniform({mu}, {0.4});
  const auto two = VariationalMixture::uniform({mu, mu}, {0.4, 0.4});
  CHECK(entropy_lower_bound(two) == doctest::Approx(entropy_lower_bound(one)).epsilon(1e-14));
}

TEST_CASE("entropy bound uniform weights equals the unweighted formula") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    VariationalMixture mix = random_mixture(3, 1 + trial % 5, rng);
    for (auto& c : mix.components) c.weight = 1.0 / static_cast<double>(mix.size());
    CHECK(std::abs(entropy_lower_bound(mix) - eq2_verbatim(mix)) < 1e-12);
    // Both code paths agree.
    Matrix sq(static_cast<Index>(mix.size()), static_cast<Index>(mix.size()));
    Vector s2(static_cast<Index>(mix.size())), w(static_cast<Index>(mix.size()));
    for (std::size_t a = 0; a < mix.size(); ++a) {
      s2(static_cast<Index>(a)) = mix.components[a].sigma2;
      w(static_cast<Index>(a)) = mix.components[a].weight;
      for (std::size_t b = 0; b < mix.size(); ++b)
        sq(static_cast<Index>(a), static_cast<Index>(b)) =
            (mix.components[a].mu - mix.components[b].mu).squaredNorm();
    }
    CHECK(std::abs(entropy_lower_bound(sq, s2, w, 3) - entropy_lower_bound(mix)) < 1e-12);
  }
}

TEST_CASE("entropy bound never exceeds Monte-Carlo entropy") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const VariationalMixture mix = random_mixture(2, 3, rng);
    const McEntropy mc = monte_carlo_entropy(mix, 200000, rng);
    CHECK(entropy_lower_bound(mix) <= mc.mean + 3.0 * mc.stderr_);
  }
}

TEST_CASE("expected_log_joint exact for a quadratic density") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 2 + trial % 4;
    const VariationalMixture mix = random_mixture(d, 1 + trial % 5, rng);
    double closed = 0.0;
    for (const auto& c : mix.components)
      closed -= c.weight * (c.mu.squaredNorm() + static_cast<double>(d) * c.sigma2) / 2.0;
    const double v = expected_log_joint(mix, Quadratic(d));
    CHECK(std::abs(v - closed) <= 1e-10 * std::abs(closed));
  }
}

TEST_CASE("expected_log_joint point masses and the flat case") {
  std::mt19937_64 rng(4);
  const Factorization F = random_factorization(4, 3, 2, rng);
  const Matrix X = F.reconstruct();
  const ModelSpec g = ModelSpec::gaussian(4, 3, 2, 0.5);
  auto mix = VariationalMixture::uniform({flatten(F)}, {1e-14});
  CHECK(expected_log_joint(mix, X, g) == doctest::Approx(log_joint(X, F, g)).epsilon(1e-10));

  const ModelSpec u = ModelSpec::uniform(4, 3, 2, 0.1);
  const Factorization G{F.A * 1.001, F.W};
  auto two = VariationalMixture::uniform({flatten(F), flatten(G)}, {0.3, 0.3});
  two.components[0].weight = 0.25;
  two.components[1].weight = 0.75;
  const double expected = 0.25 * log_joint(X, F, u) + 0.75 * log_joint(X, G, u);
  CHECK(expected_log_joint(two, X, u) == doctest::Approx(expected).epsilon(1e-12));

  Factorization bad = F;
  bad.A(0, 0) += 5.0;
  auto inf = VariationalMixture::uniform({flatten(F), flatten(bad)}, {0.1, 0.1});
  CHECK(expected_log_joint(inf, X, u) == -std::numeric_limits<double>::infinity());
  CHECK(elbo(inf, X, u) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("elbo composition and zero-weight duplicate") {
  std::mt19937_64 rng(5);
  const Factorization F = random_factorization(3, 3, 2, rng);
  const Matrix X = F.reconstruct();
  const ModelSpec u = ModelSpec::uniform(3, 3, 2, 0.2);
  const double s2 = 1e-6;
  const auto one = VariationalMixture::uniform({flatten(F)}, {s2});
  const double d = 12.0;
  CHECK(elbo(one, X, u) ==
        doctest::Approx(log_joint(X, F, u) + 0.5 * d * std::log(4.0 * kPi * s2)).epsilon(1e-12));

  const ModelSpec g = ModelSpec::gaussian(3, 3, 2, 0.3);
  const VariationalMixture mix = random_mixture(12, 3, rng);
  VariationalMixture m2 = mix;
  for (auto& c : m2.components) c.mu = c.mu.cwiseAbs();
  VariationalMixture dup = m2;
  MixtureComponent z = m2.components[1];
  z.weight = 0.0;
  dup.components.push_back(z);
  CHECK(elbo(dup, X, g) >= elbo(m2, X, g) - 1e-12);
}

TEST_CASE("elbo_gradient matches finite differences") {
  std::mt19937_64 rng(6);
  const Matrix X = random_uniform(3, 4, rng, 0.2, 1.0);
  const ModelSpec spec = ModelSpec::gaussian(3, 4, 2, 0.3);
  const NmfLogJoint density(X, spec);
  VariationalMixture mix = random_mixture(density.dim(), 3, rng);
  for (auto& c : mix.components) c.mu = c.mu.cwiseAbs().array() + 0.2;
  const Vector g = elbo_gradient(mix, density);
  const Index d = density.dim();
  const auto M = static_cast<Index>(mix.size());
  Vector x(M * d + M);
  for (Index m = 0; m < M; ++m) {
    x.segment(m * d, d) = mix.components[static_cast<std::size_t>(m)].mu;
    x(M * d + m) = std::log(mix.components[static_cast<std::size_t>(m)].sigma2);
  }
  auto f = [&](const Vector& v) {
    VariationalMixture t = mix;
    for (Index m = 0; m < M; ++m) {
      t.components[static_cast<std::size_t>(m)].mu = v.segment(m * d, d);
      t.components[static_cast<std::size_t>(m)].sigma2 = std::exp(v(M * d + m));
    }
    return elbo(t, density);
  };
  const Vector fd = finite_difference_gradient(f, x, 1e-6);
  CHECK((g - fd).norm() / fd.norm() < 1e-6);
}

TEST_CASE("box feasibility and max_box_radius") {
  const UniformProblem p = uniform_problem(7);
  const NmfLogJoint density(p.X, p.spec);
  const Vector theta = flatten(p.fit);
  CHECK(density.box_feasible(theta, 0.0));
  const double r = max_box_radius(density, theta);
  CHECK(r > 0.0);
  CHECK(density.box_feasible(theta, 0.999 * r));
  CHECK_FALSE(density.box_feasible(theta, 1.001 * r));
  // Random points inside the box stay feasible.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Vector t = theta;
    for (Index k = 0; k < t.size(); ++k) t(k) += 0.999 * r * u(rng);
    CHECK(uniform_feasible(p.X, density.decode(t), p.spec.eps));
  }
  const NmfLogJoint gauss(p.X, ModelSpec::gaussian(5, 4, 2, 1.0));
  CHECK(std::isinf(max_box_radius(gauss, theta)));
}

TEST_CASE("nvi_fit on the 1-D conjugate toy") {
  const double x = 3.0, s2 = 0.25, rate = 1.0;
  const ConjugateToy toy(x, s2, rate);
  const NviResult r = nvi_fit(toy, {Vector::Constant(1, 1.0)});
  REQUIRE(r.mixture.size() == 1);

  // Quadrature over [0, 12] on a fine grid.
  const int n = 200000;
  const double hi = 12.0, h = hi / n;
  double Z = 0.0, mode = 0.0, best = -1e300;
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    const double f = toy.scalar(t);
    Z += w * h * std::exp(f);
    if (f > best) best = f, mode = t;
  }
  const double log_Z = std::log(Z);
  const double mu = r.mixture.components[0].mu(0);
  const double var = r.mixture.components[0].sigma2;
  CHECK(std::abs(mu - mode) <= 0.02 * mode);

  // True elbo of N(mu, var): E_q f + Gaussian entropy, by quadrature.
  double eq = 0.0;
  const double sd = std::sqrt(var);
  const int m = 20000;
  for (int i = 0; i <= m; ++i) {
    const double z = -10.0 + 20.0 * i / m;
    const double w = ((i == 0 || i == m) ? 0.5 : 1.0) * 20.0 / m;
    eq += w * std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi) * toy.scalar(mu + sd * z);
  }
  const double true_elbo = eq + 0.5 * std::log(2.0 * kPi * std::exp(1.0) * var);
  const double kl = log_Z - true_elbo;
  CHECK(kl >= -1e-6);  // quadrature error only
  // The single-component bound sits 0.5 log(e/2) below the Gaussian entropy.
  CHECK(true_elbo - r.elbo == doctest::Approx(0.5 * std::log(std::exp(1.0) / 2.0)).epsilon(1e-4));
  CHECK(std::abs(r.elbo - (log_Z - kl)) < 0.1);
}

TEST_CASE("nvi_fit uniform identical initialization stays coincident") {
  const UniformProblem p = uniform_problem(9);
  const std::vector<Factorization> ten(10, p.fit);
  const NviResult r10 = nvi_fit(p.X, p.spec, ten);
  const NviResult r1 = nvi_fit(p.X, p.spec, {p.fit});
  REQUIRE(r10.mixture.size() == 10);
  for (const auto& c : r10.mixture.components) {
    CHECK(c.weight == doctest::Approx(0.1).epsilon(1e-15));
    CHECK((c.mu - r10.mixture.components[0].mu).norm() < 1e-12);
    CHECK(c.sigma2 == doctest::Approx(r10.mixture.components[0].sigma2).epsilon(1e-12));
  }
  CHECK(r10.elbo == doctest::Approx(elbo(VariationalMixture::uniform(
                                             {r10.mixture.components[0].mu},
                                             {r10.mixture.components[0].sigma2}),
                                         p.X, p.spec))
                        .epsilon(1e-12));
  CHECK(r10.elbo == doctest::Approx(r1.elbo).epsilon(1e-6));
  // Every component box stays inside the feasible set.
  const NmfLogJoint density(p.X, p.spec);
  for (const auto& c : r10.mixture.components)
    CHECK(density.box_feasible(c.mu, std::sqrt(c.sigma2)));
}

TEST_CASE("nvi_fit gaussian improves the elbo and keeps uniform weights") {
  std::mt19937_64 rng(10);
  const Matrix X = random_uniform(6, 5, rng, 0.0, 1.0);
  const ModelSpec spec = ModelSpec::gaussian(6, 5, 2, 0.05);
  const auto fits = lin_restarts(X, 2, 4, 0);
  const NviResult r = nvi_fit(X, spec, fits);
  REQUIRE(r.mixture.size() == 4);
  for (const auto& c : r.mixture.components) CHECK(c.weight == doctest::Approx(0.25));
  std::vector<Vector> mus;
  std::vector<double> s2;
  const NmfLogJoint density(X, spec);
  for (const auto& f : fits) {
    mus.push_back(flatten(f));
    s2.push_back(-1.0 * static_cast<double>(density.dim()) / density.hessian_trace(flatten(f)));
  }
  CHECK(r.elbo >= elbo(VariationalMixture::uniform(mus, s2), density) - 1e-9);
  NviOptions fd;
  fd.analytic_gradient = false;
  const NviResult rf = nvi_fit(X, spec, fits, fd);
  CHECK(rf.elbo == doctest::Approx(r.elbo).epsilon(1e-3));
}

TEST_CASE("mixture record round trips bit-exactly") {
  std::mt19937_64 rng(11);
  MixtureRecord rec{2, 3, 2, random_mixture(10, 3, rng)};
  rec.mixture.components[0].sigma2 = 1.0 / 3.0;
  std::stringstream ss;
  write_mixture(ss, rec);
  const std::string text = ss.str();
  CHECK(text.find("A_col_major_then_W_row_major") != std::string::npos);
  const MixtureRecord back = read_mixture(ss);
  CHECK(back.D == 2);
  CHECK(back.N == 3);
  CHECK(back.R == 2);
  REQUIRE(back.mixture.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(back.mixture.components[m].mu == rec.mixture.components[m].mu);
    CHECK(back.mixture.components[m].sigma2 == rec.mixture.components[m].sigma2);
    CHECK(back.mixture.components[m].weight == rec.mixture.components[m].weight);
  }
  std::stringstream bad("{\"format\": \"something-else\"}");
  CHECK_THROWS((void)read_mixture(bad));
}

TEST_CASE("mixture validation") {
  auto mix = VariationalMixture::uniform({Vector::Zero(2), Vector::Ones(2)}, {1.0, 1.0});
  CHECK_NOTHROW(mix.validate());
  mix.components[0].weight = 0.7;
  CHECK_THROWS(mix.validate());
  mix.components[0].weight = 0.5;
  mix.components[1].sigma2 = 0.0;
  CHECK_THROWS(mix.validate());
}
