#include "bnmf/onvi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bnmf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_normal_iso(double sqdist, double var, double dim) {
  return -0.5 * dim * (kLog2Pi + std::log(var)) - 0.5 * sqdist / var;
}

double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Elbo from cached component statistics; zero-weight components drop out.
double cached_elbo(const Matrix& sqdist, const Vector& f, const Vector& tr,
                   const Vector& w, const Vector& s2, Index dim) {
  double e = 0.0;
  for (Index m = 0; m < w.size(); ++m) {
    if (w(m) <= 0.0) continue;
    if (!std::isfinite(f(m))) return -kInf;
    e += w(m) * (f(m) + 0.5 * s2(m) * tr(m));
  }
  if (!std::isfinite(e)) return -kInf;
  return entropy_lower_bound(sqdist, s2, w, dim) + e;
}

Vector without(const Vector& v, Index i) {
  Vector out(v.size() - 1);
  out << v.head(i), v.tail(v.size() - i - 1);
  return out;
}

Matrix without(const Matrix& m, Index i) {
  const Index n = m.rows();
  Matrix out(n - 1, n - 1);
  for (Index r = 0, rr = 0; r < n; ++r) {
    if (r == i) continue;
    for (Index c = 0, cc = 0; c < n; ++c) {
      if (c == i) continue;
      out(rr, cc++) = m(r, c);
    }
    ++rr;
  }
  return out;
}

Vector softmax_tail(const Vector& z) {
  // First logit fixed at 0.
  Vector full(z.size() + 1);
  full(0) = 0.0;
  full.tail(z.size()) = z;
  const double mx = full.maxCoeff();
  Vector e = (full.array() - mx).exp();
  return e / e.sum();
}

Vector normalized(Vector w) {
  w /= w.sum();
  return w;
}

}  // namespace

std::string to_string(OnviOutcome outcome) {
  switch (outcome) {
    case OnviOutcome::accepted: return "accepted";
    case OnviOutcome::rejected_infeasible: return "rejected_infeasible";
    case OnviOutcome::rejected_gain: return "rejected_gain";
  }
  return "unknown";
}

OnviState::OnviState(const LogDensity& density)
    : density_(&density), f_(0), trace_(0), sqdist_(0, 0) {}

OnviState::OnviState(const LogDensity& density, const VariationalMixture& mix)
    : OnviState(density) {
  mix.validate();
  for (const auto& c : mix.components) {
    const auto M = static_cast<Index>(mix_.size());
    Vector sq(M);
    for (Index j = 0; j < M; ++j)
      sq(j) = (c.mu - mix_.components[static_cast<std::size_t>(j)].mu).squaredNorm();
    const double tr = density.has_curvature() ? density.hessian_trace(c.mu) : 0.0;
    push(c, density.value(c.mu), tr, sq);
  }
}

Vector OnviState::weights() const {
  Vector w(static_cast<Index>(mix_.size()));
  for (std::size_t m = 0; m < mix_.size(); ++m)
    w(static_cast<Index>(m)) = mix_.components[m].weight;
  return w;
}

Vector OnviState::sigma2() const {
  Vector s(static_cast<Index>(mix_.size()));
  for (std::size_t m = 0; m < mix_.size(); ++m)
    s(static_cast<Index>(m)) = mix_.components[m].sigma2;
  return s;
}

double OnviState::elbo() const {
  if (mix_.empty()) return -kInf;
  refresh();
  if (!std::isfinite(expected_)) return -kInf;
  return entropy() + expected_;
}

void OnviState::refresh() const {
  if (cache_valid_) return;
  const auto M = static_cast<Index>(mix_.size());
  const double d = static_cast<double>(density_->dim());
  log_inner_.setConstant(M, -kInf);
  expected_ = 0.0;
  std::vector<double> terms(static_cast<std::size_t>(M));
  for (Index i = 0; i < M; ++i) {
    const auto& ci = mix_.components[static_cast<std::size_t>(i)];
    if (ci.weight <= 0.0) continue;
    if (!std::isfinite(f_(i))) expected_ = -kInf;
    if (std::isfinite(expected_)) expected_ += ci.weight * (f_(i) + 0.5 * ci.sigma2 * trace_(i));
    double mx = -kInf;
    for (Index j = 0; j < M; ++j) {
      const auto& cj = mix_.components[static_cast<std::size_t>(j)];
      const double t = cj.weight > 0.0
                           ? std::log(cj.weight) +
                                 log_normal_iso(sqdist_(i, j), ci.sigma2 + cj.sigma2, d)
                           : -kInf;
      terms[static_cast<std::size_t>(j)] = t;
      mx = std::max(mx, t);
    }
    double sum = 0.0;
    for (Index j = 0; j < M; ++j) sum += std::exp(terms[static_cast<std::size_t>(j)] - mx);
    log_inner_(i) = mx + std::log(sum);
  }
  if (!std::isfinite(expected_)) expected_ = -kInf;
  cache_valid_ = true;
}

double OnviState::entropy() const {
  refresh();
  double h = 0.0;
  for (std::size_t i = 0; i < mix_.size(); ++i)
    if (mix_.components[i].weight > 0.0)
      h -= mix_.components[i].weight * log_inner_(static_cast<Index>(i));
  return h;
}

double OnviState::extended_entropy(const Vector& sq_new, double s2_new, double w_new) const {
  refresh();
  const auto M = static_cast<Index>(mix_.size());
  if (sq_new.size() != M) throw DimensionError("extended_entropy: distance vector has wrong length");
  const double d = static_cast<double>(density_->dim());
  const double log_a = std::log1p(-w_new);
  const double log_w = w_new > 0.0 ? std::log(w_new) : -kInf;
  double h = 0.0, g_mx = -kInf;
  std::vector<double> g(static_cast<std::size_t>(M), -kInf);
  for (Index i = 0; i < M; ++i) {
    const auto& ci = mix_.components[static_cast<std::size_t>(i)];
    if (ci.weight <= 0.0) continue;
    const double ln = log_normal_iso(sq_new(i), ci.sigma2 + s2_new, d);
    const double t = log_add_exp(log_a + log_inner_(i), log_w + ln);
    h -= std::exp(log_a) * ci.weight * t;
    g[static_cast<std::size_t>(i)] = std::log(ci.weight) + ln;
    g_mx = std::max(g_mx, g[static_cast<std::size_t>(i)]);
  }
  if (w_new > 0.0) {
    double sum = 0.0;
    for (double v : g) sum += std::exp(v - g_mx);
    const double G = g_mx + std::log(sum);
    const double t = log_add_exp(log_a + G, log_w + log_normal_iso(0.0, 2.0 * s2_new, d));
    h -= w_new * t;
  }
  return h;
}

double OnviState::extended_elbo(const Vector& sq_new, double f_new, double tr_new,
                                double s2_new, double w_new) const {
  refresh();
  if (!std::isfinite(expected_) || !std::isfinite(f_new)) return -kInf;
  const double e = (1.0 - w_new) * expected_ + w_new * (f_new + 0.5 * s2_new * tr_new);
  if (!std::isfinite(e)) return -kInf;
  return extended_entropy(sq_new, s2_new, w_new) + e;
}

double OnviState::elbo_without(std::size_t index) const {
  refresh();
  const auto M = static_cast<Index>(mix_.size());
  const auto r = static_cast<Index>(index);
  if (r >= M || M < 2) throw std::out_of_range("elbo_without: bad index");
  const double d = static_cast<double>(density_->dim());
  const auto& cr = mix_.components[index];
  if (!(cr.weight < 1.0)) return -kInf;
  const double log_keep = std::log1p(-cr.weight);
  const double log_wr = cr.weight > 0.0 ? std::log(cr.weight) : -kInf;
  double h = 0.0, e = 0.0;
  for (Index i = 0; i < M; ++i) {
    if (i == r) continue;
    const auto& ci = mix_.components[static_cast<std::size_t>(i)];
    if (ci.weight <= 0.0) continue;
    if (!std::isfinite(f_(i))) return -kInf;
    e += ci.weight * (f_(i) + 0.5 * ci.sigma2 * trace_(i));
    const double u =
        log_wr + log_normal_iso(sqdist_(i, r), ci.sigma2 + cr.sigma2, d) - log_inner_(i);
    double li;
    if (u < -40.0) {
      // log1p(-e^u) is below round-off against log_inner.
      li = log_inner_(i);
    } else if (u < std::log(1.0 - 1e-8)) {
      li = log_inner_(i) + std::log1p(-std::exp(u));
    } else {
      // Component r dominates the sum for i: recompute without it.
      double mx = -kInf;
      std::vector<double> t(static_cast<std::size_t>(M), -kInf);
      for (Index j = 0; j < M; ++j) {
        const auto& cj = mix_.components[static_cast<std::size_t>(j)];
        if (j == r || cj.weight <= 0.0) continue;
        t[static_cast<std::size_t>(j)] =
            std::log(cj.weight) + log_normal_iso(sqdist_(i, j), ci.sigma2 + cj.sigma2, d);
        mx = std::max(mx, t[static_cast<std::size_t>(j)]);
      }
      double sum = 0.0;
      for (double v : t) sum += std::exp(v - mx);
      li = mx + std::log(sum);
    }
    h -= ci.weight * (li - log_keep);
  }
  const double scale = std::exp(-log_keep);
  return scale * (h + e);
}

double OnviState::elbo_with(const Vector& weights, const Vector& sigma2) const {
  return cached_elbo(sqdist_, f_, trace_, weights, sigma2, density_->dim());
}

void OnviState::push(const MixtureComponent& c, double f, double trace,
                     const Vector& sqdist_to_existing) {
  const Index M = sqdist_.rows();
  if (sqdist_to_existing.size() != M)
    throw DimensionError("OnviState::push: distance vector has wrong length");
  Matrix sq = Matrix::Zero(M + 1, M + 1);
  sq.topLeftCorner(M, M) = sqdist_;
  sq.block(0, M, M, 1) = sqdist_to_existing;
  sq.block(M, 0, 1, M) = sqdist_to_existing.transpose();
  sqdist_ = std::move(sq);
  f_.conservativeResize(M + 1);
  f_(M) = f;
  trace_.conservativeResize(M + 1);
  trace_(M) = trace;
  mix_.components.push_back(c);
  cache_valid_ = false;
}

void OnviState::append(const MixtureComponent& c, double f, double trace,
                       const Vector& sqdist_to_existing) {
  const auto M = static_cast<Index>(mix_.size());
  if (sqdist_to_existing.size() != M)
    throw DimensionError("OnviState::append: distance vector has wrong length");
  if (!(c.weight > 0.0 && c.weight <= 1.0))
    throw std::invalid_argument("OnviState::append: weight must be in (0, 1]");
  const bool update = cache_valid_ && M > 0 && c.weight < 1.0;
  Vector inner;
  double expected = 0.0;
  if (update) {
    // Same recursion as extended_entropy, kept per component.
    const double d = static_cast<double>(density_->dim());
    const double log_a = std::log1p(-c.weight), log_w = std::log(c.weight);
    inner.setConstant(M + 1, -kInf);
    std::vector<double> g(static_cast<std::size_t>(M), -kInf);
    double g_mx = -kInf;
    for (Index i = 0; i < M; ++i) {
      const auto& ci = mix_.components[static_cast<std::size_t>(i)];
      if (ci.weight <= 0.0) continue;
      const double ln = log_normal_iso(sqdist_to_existing(i), ci.sigma2 + c.sigma2, d);
      inner(i) = log_add_exp(log_a + log_inner_(i), log_w + ln);
      g[static_cast<std::size_t>(i)] = std::log(ci.weight) + ln;
      g_mx = std::max(g_mx, g[static_cast<std::size_t>(i)]);
    }
    double sum = 0.0;
    for (double v : g) sum += std::exp(v - g_mx);
    inner(M) = log_add_exp(log_a + g_mx + std::log(sum),
                           log_w + log_normal_iso(0.0, 2.0 * c.sigma2, d));
    expected = std::isfinite(expected_) && std::isfinite(f)
                   ? (1.0 - c.weight) * expected_ + c.weight * (f + 0.5 * c.sigma2 * trace)
                   : -kInf;
    if (!std::isfinite(expected)) expected = -kInf;
  }
  for (auto& m : mix_.components) m.weight *= 1.0 - c.weight;
  push(c, f, trace, sqdist_to_existing);
  if (update) {
    log_inner_ = std::move(inner);
    expected_ = expected;
    cache_valid_ = true;
  }
}

void OnviState::erase(std::size_t index) {
  const auto i = static_cast<Index>(index);
  sqdist_ = without(sqdist_, i);
  f_ = without(f_, i);
  trace_ = without(trace_, i);
  mix_.components.erase(mix_.components.begin() + static_cast<std::ptrdiff_t>(index));
  cache_valid_ = false;
}

void OnviState::set_weights(const Vector& weights) {
  for (std::size_t m = 0; m < mix_.size(); ++m)
    mix_.components[m].weight = weights(static_cast<Index>(m));
  cache_valid_ = false;
}

void OnviState::set_sigma2(std::size_t index, double sigma2) {
  mix_.components.at(index).sigma2 = sigma2;
  cache_valid_ = false;
}

double entropy_gain_threshold(const VariationalMixture& mix, double sigma2) {
  if (mix.empty()) throw std::invalid_argument("entropy_gain_threshold: empty mixture");
  std::size_t k = 0;
  for (std::size_t m = 1; m < mix.size(); ++m)
    if (mix.components[m].weight > mix.components[k].weight) k = m;
  const double M = static_cast<double>(mix.size());
  VariationalMixture hyp = mix;
  for (auto& c : hyp.components) c.weight *= M / (M + 1.0);
  MixtureComponent extra;
  extra.mu = mix.components[k].mu.array() + std::sqrt(sigma2);
  extra.sigma2 = mix.components[k].sigma2;
  extra.weight = 1.0 / (M + 1.0);
  hyp.components.push_back(std::move(extra));
  return entropy_lower_bound(hyp) - entropy_lower_bound(mix);
}

double entropy_gain_threshold(const OnviState& state, double sigma2) {
  const VariationalMixture& mix = state.mixture();
  if (mix.empty()) throw std::invalid_argument("entropy_gain_threshold: empty mixture");
  std::size_t k = 0;
  for (std::size_t m = 1; m < mix.size(); ++m)
    if (mix.components[m].weight > mix.components[k].weight) k = m;
  const Vector mu = mix.components[k].mu.array() + std::sqrt(sigma2);
  const auto M = static_cast<Index>(mix.size());
  Vector sq(M);
  for (Index j = 0; j < M; ++j) sq(j) = (mu - mix.components[static_cast<std::size_t>(j)].mu).squaredNorm();
  const double w = 1.0 / static_cast<double>(M + 1);
  return state.extended_entropy(sq, mix.components[k].sigma2, w) - state.entropy();
}

OnviDecision onvi_propose(OnviState& state, const Vector& candidate_mu,
                          const OnviCriteria& criteria) {
  const LogDensity& density = state.density();
  const Index d = density.dim();
  if (candidate_mu.size() != d)
    throw DimensionError("onvi_propose: candidate has wrong length");
  const bool curved = density.has_curvature();
  if (!curved && !criteria.fixed_sigma2)
    throw std::invalid_argument("onvi_propose: flat density needs a fixed sigma2");

  OnviDecision dec;
  dec.elbo_before = state.elbo();
  const double f_new = density.value(candidate_mu);
  if (!std::isfinite(f_new)) {
    dec.outcome = OnviOutcome::rejected_infeasible;
    dec.elbo_after = dec.elbo_before;
    dec.gain = -kInf;
    return dec;
  }
  const double tr_new = curved ? density.hessian_trace(candidate_mu) : 0.0;
  const double s2_default =
      curved ? (tr_new < 0.0 ? -static_cast<double>(d) / tr_new : 1.0)
             : *criteria.fixed_sigma2;

  const auto M = static_cast<Index>(state.mixture().size());
  Vector sq_new(M);
  for (Index j = 0; j < M; ++j)
    sq_new(j) =
        (candidate_mu - state.mixture().components[static_cast<std::size_t>(j)].mu)
            .squaredNorm();

  if (M == 0) {
    state.push({candidate_mu, s2_default, 1.0}, f_new, tr_new, sq_new);
    dec.outcome = OnviOutcome::accepted;
    dec.elbo_after = state.elbo();
    dec.gain = kInf;
    return dec;
  }

  NewtonCgOptions opt = criteria.optimizer;
  double w_best = 1.0 / static_cast<double>(M + 1);
  double s2_best = s2_default;
  if (curved) {
    Objective obj = [&](const Vector& x) {
      const double w = logistic(x(1)), s2 = std::exp(x(0));
      if (!(w > 0.0 && w < 1.0) || !std::isfinite(s2)) return kInf;
      const double e = state.extended_elbo(sq_new, f_new, tr_new, s2, w);
      return std::isfinite(e) ? -e : kInf;
    };
    GradientFn grad = [&](const Vector& x) { return finite_difference_gradient(obj, x); };
    Vector x0(2);
    x0 << std::log(s2_default), logit(w_best);
    const NewtonCgResult r = newton_cg(obj, grad, x0, opt);
    s2_best = std::exp(r.x(0));
    w_best = logistic(r.x(1));
  } else {
    Objective obj = [&](const Vector& x) {
      const double w = logistic(x(0));
      if (!(w > 0.0 && w < 1.0)) return kInf;
      const double e = state.extended_elbo(sq_new, f_new, tr_new, s2_default, w);
      return std::isfinite(e) ? -e : kInf;
    };
    GradientFn grad = [&](const Vector& x) { return finite_difference_gradient(obj, x); };
    Vector x0(1);
    x0 << logit(w_best);
    const NewtonCgResult r = newton_cg(obj, grad, x0, opt);
    w_best = logistic(r.x(0));
  }
  const double e_new = state.extended_elbo(sq_new, f_new, tr_new, s2_best, w_best);

  dec.required_gain = criteria.min_gain;
  if (!curved)
    dec.required_gain =
        std::max(criteria.min_gain, entropy_gain_threshold(state, s2_default));
  dec.gain = e_new - dec.elbo_before;
  if (!(dec.gain >= dec.required_gain)) {
    dec.outcome = OnviOutcome::rejected_gain;
    dec.elbo_after = dec.elbo_before;
    return dec;
  }

  // Accepted from here on, so the state is updated in place.
  OnviState& trial = state;
  trial.append({candidate_mu, s2_best, w_best}, f_new, tr_new, sq_new);
  double e_cur = trial.elbo();

  if (criteria.reoptimize_weights) {
    const Index K = M + 1;
    const Vector w0 = trial.weights();
    const Vector s2 = trial.sigma2();
    Objective obj = [&](const Vector& z) {
      const double e = trial.elbo_with(softmax_tail(z), s2);
      return std::isfinite(e) ? -e : kInf;
    };
    GradientFn grad = [&](const Vector& z) { return finite_difference_gradient(obj, z); };
    Vector z0(K - 1);
    for (Index k = 1; k < K; ++k) z0(k - 1) = std::log(w0(k) / w0(0));
    const NewtonCgResult r = newton_cg(obj, grad, z0, opt);
    if (-r.value > e_cur) {
      trial.set_weights(softmax_tail(r.x));
      e_cur = trial.elbo();
    }
  }

  const double floor = dec.elbo_before + dec.required_gain;
  if (criteria.prune) {
    bool removed = true;
    while (removed && trial.mixture().size() > 1) {
      removed = false;
      const std::size_t newest = trial.mixture().size() - 1;
      std::vector<std::size_t> order(newest);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const Vector w = trial.weights();
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return w(static_cast<Index>(a)) < w(static_cast<Index>(b));
      });
      for (std::size_t idx : order) {
        const auto i = static_cast<Index>(idx);
        if (w(i) >= 1.0) continue;
        const double e_red = trial.elbo_without(idx);
        if (e_cur - e_red < criteria.min_gain && e_red >= floor) {
          trial.erase(idx);
          trial.set_weights(normalized(trial.weights()));
          e_cur = trial.elbo();
          ++dec.pruned;
          removed = true;
          break;
        }
      }
    }
  }

  dec.outcome = OnviOutcome::accepted;
  dec.elbo_after = e_cur;
  return dec;
}

OnviProposalResult onvi_propose(const VariationalMixture& mix,
                                const Vector& candidate_mu, const Matrix& X,
                                const ModelSpec& spec,
                                const OnviCriteria& criteria) {
  const NmfLogJoint density(X, spec);
  OnviState state(density, mix);
  OnviProposalResult out;
  out.decision = onvi_propose(state, candidate_mu, criteria);
  out.mixture = out.decision.accepted() ? state.mixture() : mix;
  return out;
}

OnviSink::OnviSink(const Matrix& X, const ModelSpec& spec, OnviCriteria criteria,
                   NviOptions nvi_options)
    : density_(std::make_unique<NmfLogJoint>(X, spec)),
      criteria_(std::move(criteria)),
      nvi_options_(std::move(nvi_options)),
      state_(*density_) {}

bool OnviSink::propose(const Factorization& candidate) {
  ++processed_;
  const Vector mu = flatten(candidate);
  OnviLogEntry entry;
  entry.index = processed_ - 1;
  entry.quality = density_->value(mu);
  if (!density_->has_curvature() && !criteria_.fixed_sigma2 &&
      std::isfinite(entry.quality)) {
    const NviResult fit = nvi_fit(*density_, std::vector<Vector>{mu}, nvi_options_);
    criteria_.fixed_sigma2 = fit.mixture.components.front().sigma2;
  }
  OnviDecision dec;
  if (!std::isfinite(entry.quality)) {
    dec.outcome = OnviOutcome::rejected_infeasible;
    dec.gain = -kInf;
  } else {
    dec = onvi_propose(state_, mu, criteria_);
  }
  entry.outcome = dec.outcome;
  entry.gain = dec.gain;
  entry.required_gain = dec.required_gain;
  entry.components = state_.mixture().size();
  entry.elbo = state_.elbo();
  log_.push_back(entry);
  return dec.accepted();
}

}  // namespace bnmf
