#include "bnmf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>

namespace bnmf {

std::vector<Index> solve_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw DimensionError("assignment cost must be square");
  if (n == 0) return {};
  // Potentials formulation, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(n, 0);
  for (Index j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

WadProfile wad_profile(const Factorization& F, ColumnScaling scaling) {
  const Index R = F.A.cols();
  WadProfile prof;
  prof.directions = Matrix::Zero(F.A.rows(), R);
  prof.zero_column = Vector::Zero(R);
  prof.weights = Vector::Zero(R);
  for (Index k = 0; k < R; ++k) {
    const double l2 = F.A.col(k).norm();
    if (l2 > 0.0) {
      prof.directions.col(k) = F.A.col(k) / l2;
    } else {
      prof.zero_column(k) = 1.0;
    }
    const double scale =
        scaling == ColumnScaling::l1 ? F.A.col(k).cwiseAbs().sum() : l2;
    prof.weights(k) = scale * F.W.row(k).sum();
  }
  const double total = prof.weights.sum();
  if (total > 0.0) prof.weights /= total;
  return prof;
}

Matrix angle_matrix(const WadProfile& a, const WadProfile& b) {
  const Index R = a.directions.cols();
  if (b.directions.cols() != R || b.directions.rows() != a.directions.rows())
    throw DimensionError("wad: factorizations have different shapes");
  constexpr double to_deg = 180.0 / std::numbers::pi;
  Matrix ang(R, R);
  for (Index i = 0; i < R; ++i) {
    for (Index j = 0; j < R; ++j) {
      const bool za = a.zero_column(i) > 0.0;
      const bool zb = b.zero_column(j) > 0.0;
      if (za || zb) {
        ang(i, j) = (za && zb) ? 0.0 : 90.0;
        continue;
      }
      const auto u = a.directions.col(i);
      const auto v = b.directions.col(j);
      // 2*atan2 keeps small angles accurate where acos(dot) would not.
      ang(i, j) = 2.0 * std::atan2((u - v).norm(), (u + v).norm()) * to_deg;
    }
  }
  return ang;
}

WadResult wad_detail(const WadProfile& a, const WadProfile& b) {
  const Matrix ang = angle_matrix(a, b);
  WadResult res;
  res.permutation = solve_assignment(ang);
  const Index R = ang.rows();
  res.angles.resize(R);
  double total = 0.0;
  for (Index r = 0; r < R; ++r) {
    const Index c = res.permutation[static_cast<std::size_t>(r)];
    res.angles(r) = ang(r, c);
    total += res.angles(r) * 0.5 * (a.weights(r) + b.weights(c));
  }
  res.wad = std::clamp(total, 0.0, 90.0);
  return res;
}

double wad(const WadProfile& a, const WadProfile& b) {
  return wad_detail(a, b).wad;
}

double wad(const Factorization& F, const Factorization& G,
           ColumnScaling scaling) {
  if (F.A.rows() != G.A.rows() || F.A.cols() != G.A.cols() ||
      F.W.cols() != G.W.cols())
    throw DimensionError("wad: factorizations have different shapes");
  return wad(wad_profile(F, scaling), wad_profile(G, scaling));
}

Matrix pairwise_wad(std::span<const Factorization> samples,
                    ColumnScaling scaling) {
  std::vector<WadProfile> prof;
  prof.reserve(samples.size());
  for (const auto& f : samples) prof.push_back(wad_profile(f, scaling));
  const auto n = static_cast<Index>(samples.size());
  Matrix out = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double v = wad(prof[static_cast<std::size_t>(i)],
                           prof[static_cast<std::size_t>(j)]);
      out(i, j) = v;
      out(j, i) = v;
    }
  return out;
}

std::size_t covering_number(const Matrix& pairwise, double epsilon_deg) {
  const Index n = pairwise.rows();
  // count(c): uncovered samples within epsilon of c, kept up to date as
  // samples get covered.
  std::vector<Index> count(static_cast<std::size_t>(n), 0);
  for (Index c = 0; c < n; ++c)
    for (Index j = 0; j < n; ++j)
      if (pairwise(j, c) <= epsilon_deg) ++count[static_cast<std::size_t>(c)];
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  Index remaining = n;
  std::size_t centers = 0;
  while (remaining > 0) {
    const auto best = static_cast<Index>(
        std::max_element(count.begin(), count.end()) - count.begin());
    for (Index j = 0; j < n; ++j) {
      if (covered[static_cast<std::size_t>(j)] || pairwise(j, best) > epsilon_deg) continue;
      covered[static_cast<std::size_t>(j)] = true;
      --remaining;
      for (Index c = 0; c < n; ++c)
        if (pairwise(c, j) <= epsilon_deg) --count[static_cast<std::size_t>(c)];
    }
    ++centers;
  }
  return centers;
}

std::size_t covering_number(std::span<const Factorization> samples,
                            double epsilon_deg) {
  return covering_number(pairwise_wad(samples), epsilon_deg);
}

std::vector<double> default_epsilon_grid() {
  std::vector<double> grid(50);
  const double lo = std::log10(1e-3);
  const double hi = std::log10(90.0);
  for (std::size_t i = 0; i < grid.size(); ++i)
    grid[i] = std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / 49.0);
  grid.back() = 90.0;
  return grid;
}

PersistenceCurve persistence_curve(const Matrix& pairwise,
                                   const std::vector<double>& grid) {
  PersistenceCurve curve;
  curve.epsilons = grid;
  std::sort(curve.epsilons.begin(), curve.epsilons.end());
  curve.counts.reserve(curve.epsilons.size());
  // A cover found at a smaller radius also covers at a larger one, so the
  // reported count is the best greedy cover seen so far.
  for (double e : curve.epsilons) {
    std::size_t c = covering_number(pairwise, e);
    if (!curve.counts.empty()) c = std::min(c, curve.counts.back());
    curve.counts.push_back(c);
  }
  return curve;
}

PersistenceCurve persistence_curve(std::span<const Factorization> samples,
                                   const std::vector<double>& grid) {
  return persistence_curve(pairwise_wad(samples), grid);
}

void write_persistence_csv(std::ostream& os, const PersistenceCurve& curve) {
  os << "epsilon_degrees,covering_number\n";
  const auto old = os.precision(17);
  for (std::size_t i = 0; i < curve.epsilons.size(); ++i)
    os << curve.epsilons[i] << ',' << curve.counts[i] << '\n';
  os.precision(old);
}

}  // namespace bnmf
