#pragma once

#include "bnmf/types.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bnmf {

// Minimum-cost perfect assignment on a square cost matrix (Hungarian method).
// result[row] = assigned column.
[[nodiscard]] std::vector<Index> solve_assignment(const Matrix& cost);

enum class ColumnScaling { l1, l2 };

// Per-factorization quantities WAD needs: unit basis directions and the
// normalized contribution of each basis column.
struct WadProfile {
  Matrix directions;   // D x R unit columns (zero columns stay zero)
  Vector zero_column;  // 1.0 where the column of A is zero
  Vector weights;      // R, sums to 1 (or all zero if W is zero)
};

[[nodiscard]] WadProfile wad_profile(const Factorization& F,
                                     ColumnScaling scaling = ColumnScaling::l1);

// R x R matrix of column angles in degrees.
[[nodiscard]] Matrix angle_matrix(const WadProfile& a, const WadProfile& b);

struct WadResult {
  double wad{0.0};
  std::vector<Index> permutation;  // column r of A matches column perm[r] of A'
  Vector angles;                   // degrees, per matched pair
};

[[nodiscard]] WadResult wad_detail(const WadProfile& a, const WadProfile& b);
[[nodiscard]] double wad(const WadProfile& a, const WadProfile& b);
// Weighted angular distance in degrees, in [0, 90].
[[nodiscard]] double wad(const Factorization& F, const Factorization& G,
                         ColumnScaling scaling = ColumnScaling::l1);

[[nodiscard]] Matrix pairwise_wad(std::span<const Factorization> samples,
                                  ColumnScaling scaling = ColumnScaling::l1);

// Greedy cover using samples as centers; ties break toward the lowest index.
[[nodiscard]] std::size_t covering_number(const Matrix& pairwise,
                                          double epsilon_deg);
[[nodiscard]] std::size_t covering_number(
    std::span<const Factorization> samples, double epsilon_deg);

struct PersistenceCurve {
  std::vector<double> epsilons;       // degrees, ascending
  std::vector<std::size_t> counts;
};

// 50 log-spaced angles over [1e-3, 90] degrees.
[[nodiscard]] std::vector<double> default_epsilon_grid();

[[nodiscard]] PersistenceCurve persistence_curve(
    const Matrix& pairwise, const std::vector<double>& grid);
[[nodiscard]] PersistenceCurve persistence_curve(
    std::span<const Factorization> samples,
    const std::vector<double>& grid = default_epsilon_grid());

// Two-column CSV: epsilon_degrees,covering_number.
void write_persistence_csv(std::ostream& os, const PersistenceCurve& curve);

}  // namespace bnmf
