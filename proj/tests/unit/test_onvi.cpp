#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bnmf/nmf_solve.hpp"
#include "bnmf/onvi.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

using namespace bnmf;
using bnmf::test::random_factorization;
using bnmf::test::random_uniform;

namespace {

constexpr double kPi = std::numbers::pi;

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

double gauss_pdf(const Vector& x, const Vector& mu, double var) {
  const double d = static_cast<double>(x.size());
  return std::pow(2.0 * kPi * var, -0.5 * d) * std::exp(-(x - mu).squaredNorm() / (2.0 * var));
}

double weight_sum(const VariationalMixture& mix) {
  double s = 0.0;
  for (const auto& c : mix.components) s += c.weight;
  return s;
}

bool same_mixture(const VariationalMixture& a, const VariationalMixture& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t m = 0; m < a.size(); ++m)
    if (a.components[m].mu != b.components[m].mu ||
        a.components[m].sigma2 != b.components[m].sigma2 ||
        a.components[m].weight != b.components[m].weight)
      return false;
  return true;
}

struct UniformSetup {
  Matrix X;
  ModelSpec spec;
  std::vector<Factorization> fits;
};

UniformSetup uniform_setup() {
  std::mt19937_64 rng(21);
  const Factorization truth = random_factorization(6, 5, 2, rng, 0.3, 1.0);
  Matrix X = (truth.reconstruct() + random_uniform(6, 5, rng, -0.02, 0.02)).cwiseMax(0.0);
  auto fits = lin_restarts(X, 2, 4, 0);
  double eps = 0.0;
  for (const auto& f : fits) eps = std::max(eps, max_abs_residual(X, f));
  return {X, ModelSpec::uniform(6, 5, 2, 2.0 * eps), fits};
}

}  // namespace

TEST_CASE("entropy_gain_threshold hand-rolled two-component oracle") {
  // d=2, M=1, sigma2=1: components at mu and mu + (1,1), weights 1/2 each.
  const Vector mu = (Vector(2) << 0.3, -0.2).finished();
  const auto mix = VariationalMixture::uniform({mu}, {1.0});
  const Vector mu2 = mu.array() + 1.0;
  const double n_same = gauss_pdf(mu, mu, 2.0);
  const double n_cross = gauss_pdf(mu, mu2, 2.0);
  const double h2 = -0.5 * std::log(0.5 * n_same + 0.5 * n_cross) -
                    0.5 * std::log(0.5 * n_cross + 0.5 * n_same);
  const double h1 = -std::log(n_same);
  CHECK(entropy_gain_threshold(mix, 1.0) == doctest::Approx(h2 - h1).epsilon(1e-12));
}

TEST_CASE("entropy_gain_threshold positive at the component variance") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t M = 1 + static_cast<std::size_t>(trial % 4);
    const Index d = 2 + trial % 5;
    const double s2 = std::pow(10.0, -4.0 * u(rng));
    std::vector<Vector> mus;
    for (std::size_t m = 0; m < M; ++m) mus.push_back(random_uniform(d, 1, rng));
    auto mix = VariationalMixture::uniform(mus, std::vector<double>(M, s2));
    double total = 0.0;
    for (auto& c : mix.components) total += (c.weight = u(rng));
    for (auto& c : mix.components) c.weight /= total;
    CHECK(entropy_gain_threshold(mix, s2) > 0.0);
  }
  CHECK_THROWS((void)entropy_gain_threshold(VariationalMixture{}, 1.0));
}

TEST_CASE("entropy_gain_threshold shrinks with the offset") {
  std::mt19937_64 rng(2);
  const auto mix = VariationalMixture::uniform({random_uniform(5, 1, rng)}, {0.1});
  double prev = std::numeric_limits<double>::infinity();
  for (double s2 : {1.0, 0.1, 1e-2, 1e-3, 1e-4, 1e-6}) {
    const double t = entropy_gain_threshold(mix, s2);
    CHECK(t > 0.0);
    CHECK(t < prev);
    prev = t;
  }
  CHECK(prev < 1e-4);
}

TEST_CASE("first proposal is accepted with unit weight") {
  const Quadratic q(3);
  OnviState state(q);
  const OnviDecision d = onvi_propose(state, Vector::Zero(3), {});
  CHECK(d.accepted());
  REQUIRE(state.mixture().size() == 1);
  CHECK(state.mixture().components[0].weight == 1.0);
  CHECK(state.mixture().components[0].sigma2 == doctest::Approx(1.0));
}

TEST_CASE("gaussian-mode acceptance contract and weight scaling") {
  const Quadratic q(2);
  // Mixture with a good component at the mode and a poor one far away.
  auto mix = VariationalMixture::uniform({Vector::Zero(2), Vector::Constant(2, 6.0)}, {1.0, 1.0});
  mix.components[0].weight = 0.8;
  mix.components[1].weight = 0.2;
  OnviState state(q, mix);
  CHECK(state.elbo() == doctest::Approx(elbo(mix, q)).epsilon(1e-12));
  const double before = state.elbo();
  OnviCriteria crit;
  crit.prune = false;
  const OnviDecision d = onvi_propose(state, (Vector(2) << 0.2, -0.1).finished(), crit);
  REQUIRE(d.accepted());
  CHECK(d.elbo_after >= before + crit.min_gain);
  CHECK(state.elbo() == doctest::Approx(d.elbo_after).epsilon(1e-12));
  CHECK(std::abs(weight_sum(state.mixture()) - 1.0) < 1e-12);
  const double w_new = state.mixture().components[2].weight;
  CHECK(state.mixture().components[0].weight == doctest::Approx(0.8 * (1.0 - w_new)));
  CHECK(state.mixture().components[1].weight == doctest::Approx(0.2 * (1.0 - w_new)));
}

TEST_CASE("prune removes a component that only costs elbo") {
  const Quadratic q(2);
  auto mix = VariationalMixture::uniform({Vector::Zero(2), Vector::Constant(2, 6.0)}, {1.0, 1.0});
  mix.components[0].weight = 0.8;
  mix.components[1].weight = 0.2;
  OnviState state(q, mix);
  const OnviDecision d = onvi_propose(state, (Vector(2) << 0.2, -0.1).finished(), {});
  REQUIRE(d.accepted());
  CHECK(d.pruned >= 1);
  for (const auto& c : state.mixture().components) CHECK(c.mu.norm() < 1.0);
  CHECK(std::abs(weight_sum(state.mixture()) - 1.0) < 1e-12);
  CHECK(d.elbo_after >= d.elbo_before + d.required_gain);
  CHECK(state.elbo() == doctest::Approx(elbo(state.mixture(), q)).epsilon(1e-12));
}

TEST_CASE("rejection leaves the mixture bitwise unchanged") {
  const Quadratic q(2);
  auto mix = VariationalMixture::uniform({Vector::Zero(2)}, {1.0});
  OnviState state(q, mix);
  const VariationalMixture snapshot = state.mixture();
  // A candidate far from the mode cannot pay for its weight.
  const OnviDecision d = onvi_propose(state, Vector::Constant(2, 50.0), {});
  CHECK_FALSE(d.accepted());
  CHECK(d.outcome == OnviOutcome::rejected_gain);
  CHECK(same_mixture(state.mixture(), snapshot));
  CHECK(d.elbo_after == d.elbo_before);
}

TEST_CASE("reoptimized weights never do worse than scaled weights") {
  const Quadratic q(2);
  auto mix = VariationalMixture::uniform({Vector::Zero(2), Vector::Constant(2, 1.5)}, {0.5, 0.5});
  const Vector cand = (Vector(2) << -1.0, 0.5).finished();
  OnviState a(q, mix), b(q, mix);
  OnviCriteria plain, reopt;
  plain.prune = reopt.prune = false;
  reopt.reoptimize_weights = true;
  const OnviDecision da = onvi_propose(a, cand, plain);
  const OnviDecision db = onvi_propose(b, cand, reopt);
  REQUIRE(da.accepted());
  REQUIRE(db.accepted());
  CHECK(db.elbo_after >= da.elbo_after - 1e-12);
  CHECK(std::abs(weight_sum(b.mixture()) - 1.0) < 1e-12);
}

TEST_CASE("uniform mode: duplicate rejected, infeasible rejected") {
  const UniformSetup s = uniform_setup();
  const NmfLogJoint density(s.X, s.spec);
  const Vector mu0 = flatten(s.fits[0]);
  const double s2 = max_box_radius(density, mu0) / 4.0;
  OnviCriteria crit;
  crit.fixed_sigma2 = s2 * s2;
  OnviState state(density);
  REQUIRE(onvi_propose(state, mu0, crit).accepted());

  const VariationalMixture snap = state.mixture();
  const OnviDecision dup = onvi_propose(state, mu0, crit);
  CHECK_FALSE(dup.accepted());
  CHECK(dup.gain < dup.required_gain);
  CHECK(same_mixture(state.mixture(), snap));

  Factorization bad = s.fits[0];
  bad.A.array() += 10.0;
  const OnviDecision inf = onvi_propose(state, flatten(bad), crit);
  CHECK(inf.outcome == OnviOutcome::rejected_infeasible);
  CHECK(same_mixture(state.mixture(), snap));

  OnviCriteria missing;
  CHECK_THROWS(onvi_propose(state, mu0, missing));
}

TEST_CASE("uniform mode: accepted candidates clear the entropy threshold") {
  const UniformSetup s = uniform_setup();
  OnviSink sink(s.X, s.spec);
  for (const auto& f : s.fits) (void)sink.propose(f);
  REQUIRE(sink.criteria().fixed_sigma2.has_value());
  CHECK(*sink.criteria().fixed_sigma2 > 0.0);
  REQUIRE(sink.log().size() == s.fits.size());
  for (const auto& e : sink.log()) {
    if (e.outcome == OnviOutcome::accepted && e.index > 0) {
      CHECK(e.gain >= e.required_gain);
      CHECK(e.required_gain >= 1e-4);
    }
    CHECK(e.components == e.components);
  }
  CHECK(sink.processed() == s.fits.size());
  CHECK(std::abs(weight_sum(sink.mixture()) - 1.0) < 1e-12);
  for (const auto& c : sink.mixture().components)
    CHECK(c.sigma2 == *sink.criteria().fixed_sigma2);
}

TEST_CASE("non-mutating form returns the input on rejection") {
  std::mt19937_64 rng(3);
  const Factorization F = random_factorization(3, 3, 2, rng);
  const Matrix X = F.reconstruct();
  const ModelSpec spec = ModelSpec::gaussian(3, 3, 2, 0.01);
  const auto mix = VariationalMixture::uniform({flatten(F)}, {1e-3});
  Factorization far = F;
  far.A.array() += 3.0;
  const OnviProposalResult r = onvi_propose(mix, flatten(far), X, spec, {});
  CHECK_FALSE(r.decision.accepted());
  CHECK(same_mixture(r.mixture, mix));
}

TEST_CASE("cached extended and reduced elbo match direct evaluation") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 2 + trial % 4;
    const std::size_t M = 2 + static_cast<std::size_t>(trial % 5);
    const Quadratic q(d);
    VariationalMixture mix;
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      mix.components.push_back({random_uniform(d, 1, rng, -1.0, 1.0), u(rng), u(rng)});
      total += mix.components.back().weight;
    }
    for (auto& c : mix.components) c.weight /= total;
    // One near-duplicate pair exercises the dominated-term branch.
    mix.components[1].mu = mix.components[0].mu.array() + 1e-9;
    const OnviState state(q, mix);
    CHECK(state.elbo() == doctest::Approx(elbo(mix, q)).epsilon(1e-10));

    const Vector cand = random_uniform(d, 1, rng, -1.0, 1.0);
    const double s2 = u(rng), w = u(rng) * 0.9;
    Vector sq(static_cast<Index>(M));
    for (std::size_t j = 0; j < M; ++j) sq(static_cast<Index>(j)) = (cand - mix.components[j].mu).squaredNorm();
    VariationalMixture ext = mix;
    for (auto& c : ext.components) c.weight *= 1.0 - w;
    ext.components.push_back({cand, s2, w});
    CHECK(state.extended_elbo(sq, q.value(cand), q.hessian_trace(cand), s2, w) ==
          doctest::Approx(elbo(ext, q)).epsilon(1e-10));

    for (std::size_t r = 0; r < M; ++r) {
      VariationalMixture red = mix;
      red.components.erase(red.components.begin() + static_cast<std::ptrdiff_t>(r));
      double t = 0.0;
      for (const auto& c : red.components) t += c.weight;
      for (auto& c : red.components) c.weight /= t;
      CHECK(state.elbo_without(r) == doctest::Approx(elbo(red, q)).epsilon(1e-9));
    }
    CHECK(entropy_gain_threshold(state, 0.3) ==
          doctest::Approx(entropy_gain_threshold(mix, 0.3)).epsilon(1e-9));
  }
}
