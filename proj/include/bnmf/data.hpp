#pragma once

#include "bnmf/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace bnmf {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class MatrixFormat { dense_csv, coordinate };

[[nodiscard]] MatrixFormat parse_matrix_format(const std::string& name);

struct Dataset {
  Matrix X;
  std::string name;
  bool synthetic{false};
  std::string params;  // generator parameters when synthetic
  std::uint64_t seed{0};
  std::vector<Factorization> ground_truth;
  std::size_t clipped_negatives{0};
};

// Dense CSV: one row per line, comma separated. Coordinate: header "D N nnz"
// followed by 1-indexed "row col value" triplets. Negative values are clipped
// to zero and counted.
[[nodiscard]] Dataset parse_matrix(std::istream& is, MatrixFormat format,
                                   std::string name = "");
[[nodiscard]] Dataset load_matrix(const std::filesystem::path& path,
                                  MatrixFormat format);

void write_csv(std::ostream& os, const Matrix& M);
void write_csv(const std::filesystem::path& path, const Matrix& M);

// Writes data.csv plus truth_<i>_A.csv / truth_<i>_W.csv (i from 1) per ground truth.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

// Rank-3 data with two distinct exact nonnegative factorizations of a 4x4
// core, embedded by nonnegative D x 4 and 4 x N mixing and perturbed by
// Uniform(-noise_eps, noise_eps) noise (then clipped at zero).
[[nodiscard]] Dataset gen_two_nmf_toy(Index D, Index N, double noise_eps,
                                      std::uint64_t seed);

}  // namespace bnmf
