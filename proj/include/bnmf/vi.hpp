#pragma once

#include "bnmf/model.hpp"
#include "bnmf/optimize.hpp"
#include "bnmf/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace bnmf {

// Isotropic Gaussian component over the flattened (A, W) parameter vector.
struct MixtureComponent {
  Vector mu;
  double sigma2{1.0};
  double weight{1.0};
};

struct VariationalMixture {
  std::vector<MixtureComponent> components;

  [[nodiscard]] std::size_t size() const { return components.size(); }
  [[nodiscard]] bool empty() const { return components.empty(); }
  [[nodiscard]] Index dim() const {
    return components.empty() ? 0 : components.front().mu.size();
  }
  // Checks sigma2 > 0, weights in (0,1] summing to 1, consistent dimension.
  void validate() const;
  // Equal weights 1/M.
  static VariationalMixture uniform(std::vector<Vector> mus,
                                    std::vector<double> sigma2s);
};

// Target log density f(theta) for the second-order expectation.
class LogDensity {
 public:
  virtual ~LogDensity() = default;
  [[nodiscard]] virtual Index dim() const = 0;
  [[nodiscard]] virtual double value(const Vector& theta) const = 0;
  [[nodiscard]] virtual Vector gradient(const Vector& theta) const = 0;
  [[nodiscard]] virtual double hessian_trace(const Vector& theta) const = 0;
  [[nodiscard]] virtual Vector hessian_trace_gradient(
      const Vector& theta) const = 0;
  // False when the density is flat inside its support.
  [[nodiscard]] virtual bool has_curvature() const { return true; }
  // Whether the l-infinity box of half-width `radius` around theta stays in
  // the support. Densities with full support always return true.
  [[nodiscard]] virtual bool box_feasible(const Vector&, double) const {
    return true;
  }
  // Coordinate-wise lower bound of the parameter domain, if any.
  [[nodiscard]] virtual std::optional<double> lower_bound() const {
    return std::nullopt;
  }
};

// log p(X, A, W) viewed as a function of the flattened parameter vector.
// Negative coordinates are clipped on decode.
class NmfLogJoint final : public LogDensity {
 public:
  NmfLogJoint(Matrix X, ModelSpec spec);

  [[nodiscard]] Index dim() const override;
  [[nodiscard]] double value(const Vector& theta) const override;
  [[nodiscard]] Vector gradient(const Vector& theta) const override;
  [[nodiscard]] double hessian_trace(const Vector& theta) const override;
  [[nodiscard]] Vector hessian_trace_gradient(const Vector& theta) const override;
  [[nodiscard]] bool has_curvature() const override { return spec_.is_gaussian(); }
  [[nodiscard]] bool box_feasible(const Vector& theta,
                                  double radius) const override;
  [[nodiscard]] std::optional<double> lower_bound() const override { return 0.0; }

  [[nodiscard]] const Matrix& data() const { return X_; }
  [[nodiscard]] const ModelSpec& spec() const { return spec_; }
  [[nodiscard]] Factorization decode(const Vector& theta) const;

 private:
  Matrix X_;
  ModelSpec spec_;
};

// -sum_m w_m log sum_j w_j N(mu_m; mu_j, (s_m + s_j) I), in log domain.
[[nodiscard]] double entropy_lower_bound(const VariationalMixture& mix);

// Same bound from precomputed squared center distances.
[[nodiscard]] double entropy_lower_bound(const Matrix& sqdist,
                                         const Vector& sigma2,
                                         const Vector& weights, Index dim);

// sum_m w_m [f(mu_m) + sigma2_m / 2 * tr H(mu_m)]; -inf if any f is -inf.
[[nodiscard]] double expected_log_joint(const VariationalMixture& mix,
                                        const LogDensity& density);
[[nodiscard]] double expected_log_joint(const VariationalMixture& mix,
                                        const Matrix& X, const ModelSpec& spec);

[[nodiscard]] double elbo(const VariationalMixture& mix,
                          const LogDensity& density);
[[nodiscard]] double elbo(const VariationalMixture& mix, const Matrix& X,
                          const ModelSpec& spec);

// Largest radius r for which density.box_feasible(theta, r) holds, found by
// bracketing and bisection. Returns +inf for densities without a boundary.
[[nodiscard]] double max_box_radius(const LogDensity& density,
                                    const Vector& theta);

struct NviOptions {
  int max_iter{200};
  double abs_tol{1e-4};
  bool analytic_gradient{true};
  NewtonCgOptions optimizer{};
};

struct NviResult {
  VariationalMixture mixture;
  double elbo{0.0};
  int iterations{0};
  bool converged{false};
};

// Batch NVI with uniform weights 1/M: jointly optimizes every center and
// log-variance by Newton-CG on the negative elbo.
[[nodiscard]] NviResult nvi_fit(const LogDensity& density,
                                const std::vector<Vector>& init_mus,
                                const NviOptions& options = {});
[[nodiscard]] NviResult nvi_fit(const Matrix& X, const ModelSpec& spec,
                                const std::vector<Factorization>& init,
                                const NviOptions& options = {});

// Gradient of the elbo in (mu_1..mu_M, log sigma2_1..log sigma2_M) with the
// weights held fixed.
[[nodiscard]] Vector elbo_gradient(const VariationalMixture& mix,
                                   const LogDensity& density);

// Versioned JSON mixture record; doubles round-trip bit-exactly.
struct MixtureRecord {
  Index D{0};
  Index N{0};
  Index R{0};
  VariationalMixture mixture;
};

void write_mixture(std::ostream& os, const MixtureRecord& record);
[[nodiscard]] MixtureRecord read_mixture(std::istream& is);

}  // namespace bnmf
