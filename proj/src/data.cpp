#include "bnmf/data.hpp"

#include "bnmf/metrics.hpp"

#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

namespace bnmf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& tok, std::size_t line) {
  const std::string t = trim(tok);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError("cannot parse number '" + t + "'", line);
  return v;
}

long parse_index(const std::string& tok, std::size_t line) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("cannot parse integer '" + tok + "'", line);
  return v;
}

double clip(double v, std::size_t& clipped) {
  if (v < 0.0) {
    ++clipped;
    return 0.0;
  }
  return v;
}

Dataset parse_dense(std::istream& is) {
  Dataset ds;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(clip(parse_double(tok, lineno), ds.clipped_negatives));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("expected " + std::to_string(rows.front().size()) + " columns, got " +
                           std::to_string(row.size()),
                       lineno);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty matrix", lineno);
  ds.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      ds.X(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return ds;
}

Dataset parse_coordinate(std::istream& is) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  long D = 0, N = 0, nnz = 0, seen = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '%') continue;
    std::stringstream ss(t);
    std::string a, b, c, extra;
    if (!(ss >> a >> b >> c) || (ss >> extra))
      throw ParseError("expected three fields", lineno);
    if (!header) {
      D = parse_index(a, lineno);
      N = parse_index(b, lineno);
      nnz = parse_index(c, lineno);
      if (D <= 0 || N <= 0 || nnz < 0) throw ParseError("invalid header", lineno);
      ds.X = Matrix::Zero(D, N);
      header = true;
      continue;
    }
    const long r = parse_index(a, lineno);
    const long col = parse_index(b, lineno);
    if (r < 1 || r > D || col < 1 || col > N) throw ParseError("index out of range", lineno);
    ds.X(r - 1, col - 1) = clip(parse_double(c, lineno), ds.clipped_negatives);
    ++seen;
  }
  if (!header) throw ParseError("missing header", lineno);
  if (seen != nnz)
    throw ParseError("header declares " + std::to_string(nnz) + " entries, found " +
                         std::to_string(seen),
                     lineno);
  return ds;
}

}  // namespace

MatrixFormat parse_matrix_format(const std::string& name) {
  if (name == "csv" || name == "dense" || name == "dense_csv" || name == "dense-csv")
    return MatrixFormat::dense_csv;
  if (name == "coordinate" || name == "sparse" || name == "coo" ||
      name == "coordinate-sparse")
    return MatrixFormat::coordinate;
  throw std::invalid_argument("unknown matrix format '" + name + "'");
}

Dataset parse_matrix(std::istream& is, MatrixFormat format, std::string name) {
  Dataset ds = format == MatrixFormat::dense_csv ? parse_dense(is) : parse_coordinate(is);
  ds.name = std::move(name);
  return ds;
}

Dataset load_matrix(const std::filesystem::path& path, MatrixFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_matrix(in, format, path.stem().string());
}

void write_csv(std::ostream& os, const Matrix& M) {
  const auto old = os.precision(17);
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) {
      if (c) os << ',';
      os << M(r, c);
    }
    os << '\n';
  }
  os.precision(old);
}

void write_csv(const std::filesystem::path& path, const Matrix& M) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out, M);
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "data.csv", data.X);
  for (std::size_t i = 0; i < data.ground_truth.size(); ++i) {
    const std::string stem = "truth_" + std::to_string(i + 1);
    write_csv(dir / (stem + "_A.csv"), data.ground_truth[i].A);
    write_csv(dir / (stem + "_W.csv"), data.ground_truth[i].W);
  }
}

Dataset gen_two_nmf_toy(Index D, Index N, double noise_eps, std::uint64_t seed) {
  if (D < 4 || N < 4) throw DimensionError("gen_two_nmf_toy: D and N must be >= 4");
  if (noise_eps < 0.0) throw std::invalid_argument("gen_two_nmf_toy: noise_eps must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Cyclic permutation mixing: T = (1 - t) I + t P keeps A1 T inside the
  // cone of A1 and T W2 nonnegative, so (A1, T W2) and (A1 T, W2) are both
  // exact nonnegative factorizations of A1 T W2.
  Matrix P = Matrix::Zero(3, 3);
  P(0, 1) = P(1, 2) = P(2, 0) = 1.0;
  Factorization F1, F2;
  bool found = false;
  for (int attempt = 0; attempt < 100 && !found; ++attempt) {
    Matrix A1(4, 3), W2(3, 4);
    for (Index i = 0; i < 4; ++i)
      for (Index k = 0; k < 3; ++k) A1(i, k) = 0.2 + unif(rng);
    for (Index k = 0; k < 3; ++k)
      for (Index j = 0; j < 4; ++j) W2(k, j) = 0.2 + unif(rng);
    for (Index k = 0; k < 3; ++k) {
      A1(k, k) = 0.0;
      W2(k, (k + 1) % 4) = 0.0;
    }
    const double t = 0.25 + 0.1 * unif(rng);
    const Matrix T = (1.0 - t) * Matrix::Identity(3, 3) + t * P;
    F1 = {A1, T * W2};
    F2 = {A1 * T, W2};
    const Eigen::JacobiSVD<Matrix> svd(F1.reconstruct());
    const Vector sv = svd.singularValues();
    found = wad(F1, F2) > 5.0 && sv(2) > 1e-3 * sv(0);
  }
  if (!found) throw NumericalError("gen_two_nmf_toy: construction search failed");

  Matrix left(D, 4), right(4, N);
  for (Index i = 0; i < D; ++i)
    for (Index j = 0; j < 4; ++j) left(i, j) = unif(rng);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < N; ++j) right(i, j) = unif(rng);

  Dataset ds;
  ds.name = "two_nmf_toy";
  ds.synthetic = true;
  ds.seed = seed;
  std::ostringstream params;
  params << "D=" << D << " N=" << N << " noise_eps=" << noise_eps;
  ds.params = params.str();
  ds.ground_truth = {{left * F1.A, F1.W * right}, {left * F2.A, F2.W * right}};
  ds.X = ds.ground_truth.front().reconstruct();
  if (noise_eps > 0.0) {
    std::uniform_real_distribution<double> noise(-noise_eps, noise_eps);
    for (Index j = 0; j < N; ++j)
      for (Index i = 0; i < D; ++i) ds.X(i, j) = std::max(0.0, ds.X(i, j) + noise(rng));
  }
  return ds;
}

}  // namespace bnmf
