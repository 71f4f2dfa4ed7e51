#pragma once

#include "bnmf/model.hpp"
#include "bnmf/onvi.hpp"
#include "bnmf/types.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace bnmf {

// Exact draw from N(mean, var) truncated to [0, inf). Inverse CDF when
// mean/sd >= -4, Robert's exponential rejection sampler deeper in the tail.
[[nodiscard]] double truncated_normal_sample(double mean, double var,
                                             std::mt19937_64& rng);

// Analytic mean of N(mean, var) truncated to [0, inf).
[[nodiscard]] double truncated_normal_mean(double mean, double var);

struct ChainState {
  Factorization factorization;
  std::uint64_t iteration{0};
  std::mt19937_64 rng;
  double step_size{0.0};  // HMC only
};

struct GaussianConditional {
  double mean{0.0};
  double var{0.0};
  bool prior_fallback{false};  // no likelihood information: Exp(rate)
  double rate{1.0};
};

// Full conditionals for A(d,k) and W(k,n) under the Gaussian model.
[[nodiscard]] GaussianConditional gibbs_conditional_A(const Matrix& X,
                                                      const Factorization& F,
                                                      const ModelSpec& spec,
                                                      Index d, Index k);
[[nodiscard]] GaussianConditional gibbs_conditional_W(const Matrix& X,
                                                      const Factorization& F,
                                                      const ModelSpec& spec,
                                                      Index k, Index n);

struct GibbsSweep {
  bool update_A{true};
  bool update_W{true};
};

// One systematic sweep: A column-major, then W row-major.
[[nodiscard]] ChainState gibbs_step(const Matrix& X, ChainState state,
                                    const ModelSpec& spec,
                                    GibbsSweep sweep = {});

struct ChainReport {
  std::size_t samples{0};          // samples forwarded to the sink
  std::size_t accepted_proposals{0};  // ONVI acceptances
  double adapt_acceptance{0.0};    // HMC, mean acceptance while adapting
  double acceptance{0.0};          // HMC, mean acceptance after adapting
  double step_size{0.0};
  std::vector<double> log_joint_trace;
  std::vector<Factorization> snapshots;  // every snapshot_thin-th sample
  ChainState final_state;
};

struct GibbsOptions {
  std::size_t n_samples{10000};
  std::size_t snapshot_thin{100};
};

[[nodiscard]] ChainReport gibbs_run(const Matrix& X, const ModelSpec& spec,
                                    const Factorization& init,
                                    std::uint64_t seed,
                                    const GibbsOptions& options = {},
                                    ProposalSink* sink = nullptr);

struct HmcOptions {
  std::size_t n_samples{10000};
  int leapfrog_steps{20};
  double target_acceptance{0.65};
  double adapt_fraction{0.1};
  double initial_step{0.0};  // <= 0 selects the doubling/halving heuristic
  std::size_t snapshot_thin{100};
};

struct HmcTransition {
  Vector theta;
  double accept_prob{0.0};
  bool accepted{false};
  double energy_change{0.0};  // H(end) - H(start); +inf if the wall was hit
};

// One HMC transition on the flattened parameters with reflection at zero.
// Uniform likelihood: any infeasible intermediate point rejects.
[[nodiscard]] HmcTransition hmc_transition(const NmfLogJoint& density,
                                           const Vector& theta, double step,
                                           int leapfrog_steps,
                                           std::mt19937_64& rng);

// Step size from doubling/halving until a one-step acceptance crosses 0.5.
[[nodiscard]] double hmc_initial_step(const NmfLogJoint& density,
                                      const Vector& theta,
                                      std::mt19937_64& rng);

// Adapts the step size during the first adapt_fraction of the chain and
// forwards each post-adaptation sample to the sink.
[[nodiscard]] ChainReport hmc_run(const Matrix& X, const ModelSpec& spec,
                                  const Factorization& init, std::uint64_t seed,
                                  const HmcOptions& options = {},
                                  ProposalSink* sink = nullptr);

void write_chain_trace(std::ostream& os, const ChainReport& report);

}  // namespace bnmf
