#pragma once

#include "bnmf/vi.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bnmf {

struct OnviCriteria {
  double min_gain{1e-4};
  // Uniform likelihood: variance shared by every added component.
  std::optional<double> fixed_sigma2;
  // Re-optimize all weights as a block after an acceptance instead of only
  // scaling the previous weights by (1 - w_new).
  bool reoptimize_weights{false};
  bool prune{true};
  NewtonCgOptions optimizer{};
};

enum class OnviOutcome { accepted, rejected_infeasible, rejected_gain };

struct OnviDecision {
  OnviOutcome outcome{OnviOutcome::rejected_gain};
  double elbo_before{0.0};
  double elbo_after{0.0};
  double gain{0.0};
  double required_gain{0.0};
  std::size_t pruned{0};
  [[nodiscard]] bool accepted() const { return outcome == OnviOutcome::accepted; }
};

[[nodiscard]] std::string to_string(OnviOutcome outcome);

// Mixture plus cached per-component f(mu), tr H(mu) and pairwise squared
// distances so that elbo evaluations during a proposal are O(M^2).
class OnviState {
 public:
  explicit OnviState(const LogDensity& density);
  OnviState(const LogDensity& density, const VariationalMixture& mix);

  [[nodiscard]] const VariationalMixture& mixture() const { return mix_; }
  [[nodiscard]] double elbo() const;
  [[nodiscard]] const LogDensity& density() const { return *density_; }

  // Elbo with modified weights and (optionally) one extra component.
  [[nodiscard]] double elbo_with(const Vector& weights,
                                 const Vector& sigma2) const;

  // O(M) evaluations against cached per-component log mixture densities.
  // Extended: one extra component at weight w_new, the rest scaled by
  // (1 - w_new). Without: component `index` dropped, weights renormalized.
  [[nodiscard]] double entropy() const;
  [[nodiscard]] double extended_entropy(const Vector& sqdist_new, double sigma2_new,
                                        double w_new) const;
  [[nodiscard]] double extended_elbo(const Vector& sqdist_new, double f_new,
                                     double trace_new, double sigma2_new,
                                     double w_new) const;
  [[nodiscard]] double elbo_without(std::size_t index) const;

  void push(const MixtureComponent& c, double f, double trace,
            const Vector& sqdist_to_existing);
  // Adds c at weight c.weight with the existing weights scaled by
  // (1 - c.weight); updates the cache in O(M) when it is valid.
  void append(const MixtureComponent& c, double f, double trace,
              const Vector& sqdist_to_existing);
  void erase(std::size_t index);
  void set_weights(const Vector& weights);
  void set_sigma2(std::size_t index, double sigma2);

  [[nodiscard]] Vector weights() const;
  [[nodiscard]] Vector sigma2() const;
  [[nodiscard]] const Matrix& sqdist() const { return sqdist_; }
  [[nodiscard]] const Vector& f() const { return f_; }
  [[nodiscard]] const Vector& trace() const { return trace_; }

 private:
  const LogDensity* density_;
  VariationalMixture mix_;
  Vector f_;
  Vector trace_;
  Matrix sqdist_;

  // log sum_j w_j N(mu_i; mu_j, s_i + s_j), and sum_i w_i (f_i + s_i tr_i / 2).
  mutable Vector log_inner_;
  mutable double expected_{0.0};
  mutable bool cache_valid_{false};
  void refresh() const;
};

// Entropy increase from adding mu_k + sigma * 1 (k the largest-weight
// component) at weight 1/(M+1) with the existing weights scaled down.
[[nodiscard]] double entropy_gain_threshold(const VariationalMixture& mix,
                                            double sigma2);
[[nodiscard]] double entropy_gain_threshold(const OnviState& state, double sigma2);

// One online step: optimize the new component's (sigma2, w) with existing
// components fixed, accept on sufficient elbo gain, then prune. The state is
// left untouched on rejection.
OnviDecision onvi_propose(OnviState& state, const Vector& candidate_mu,
                          const OnviCriteria& criteria);

// Non-mutating convenience form.
struct OnviProposalResult {
  OnviDecision decision;
  VariationalMixture mixture;
};
[[nodiscard]] OnviProposalResult onvi_propose(const VariationalMixture& mix,
                                              const Vector& candidate_mu,
                                              const Matrix& X,
                                              const ModelSpec& spec,
                                              const OnviCriteria& criteria);

// Receives candidate factorizations from an explorer or sampler.
class ProposalSink {
 public:
  virtual ~ProposalSink() = default;
  // Returns true when the candidate was accepted.
  virtual bool propose(const Factorization& candidate) = 0;
  [[nodiscard]] virtual std::size_t processed() const = 0;
};

struct OnviLogEntry {
  std::size_t index{0};
  double quality{0.0};
  OnviOutcome outcome{OnviOutcome::rejected_gain};
  double gain{0.0};
  double required_gain{0.0};
  std::size_t components{0};
  double elbo{0.0};
};

// ONVI over the NMF log joint. For the Uniform likelihood the shared
// component variance is taken from NVI(M=1) fitted at the first feasible
// proposal unless criteria.fixed_sigma2 is already set.
class OnviSink final : public ProposalSink {
 public:
  OnviSink(const Matrix& X, const ModelSpec& spec, OnviCriteria criteria = {},
           NviOptions nvi_options = {});

  bool propose(const Factorization& candidate) override;
  [[nodiscard]] std::size_t processed() const override { return processed_; }

  [[nodiscard]] const VariationalMixture& mixture() const { return state_.mixture(); }
  [[nodiscard]] double elbo() const { return state_.elbo(); }
  [[nodiscard]] const std::vector<OnviLogEntry>& log() const { return log_; }
  [[nodiscard]] const OnviCriteria& criteria() const { return criteria_; }
  [[nodiscard]] const NmfLogJoint& density() const { return *density_; }

 private:
  std::unique_ptr<NmfLogJoint> density_;
  OnviCriteria criteria_;
  NviOptions nvi_options_;
  OnviState state_;
  std::size_t processed_{0};
  std::vector<OnviLogEntry> log_;
};

}  // namespace bnmf
