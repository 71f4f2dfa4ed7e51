#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bnmf {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised when an operation hits a singular or otherwise degenerate numeric
// configuration (near-singular Q, zero columns, failed decompositions).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for shape mismatches and out-of-range arguments.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Nonnegative factor pair X ~ A * W.
struct Factorization {
  Matrix A;  // D x R basis
  Matrix W;  // R x N weights

  [[nodiscard]] Index rows() const { return A.rows(); }
  [[nodiscard]] Index cols() const { return W.cols(); }
  [[nodiscard]] Index rank() const { return A.cols(); }
  [[nodiscard]] Matrix reconstruct() const { return A * W; }
  [[nodiscard]] bool nonnegative() const {
    return (A.array() >= 0.0).all() && (W.array() >= 0.0).all();
  }
};

// Flattened parameter layout shared by samplers, mixtures and serialization:
// A in column-major order followed by W in row-major order.
[[nodiscard]] Vector flatten(const Factorization& f);
[[nodiscard]] Factorization unflatten(const Vector& theta, Index D, Index N,
                                      Index R);
// unflatten() followed by entrywise max(., 0).
[[nodiscard]] Factorization decode(const Vector& theta, Index D, Index N,
                                   Index R);

[[nodiscard]] inline Index parameter_count(Index D, Index N, Index R) {
  return R * (D + N);
}

}  // namespace bnmf
