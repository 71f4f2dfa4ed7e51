#pragma once

#include "bnmf/config.hpp"
#include "bnmf/data.hpp"
#include "bnmf/metrics.hpp"
#include "bnmf/model.hpp"
#include "bnmf/nmf_solve.hpp"
#include "bnmf/onvi.hpp"
#include "bnmf/rrt.hpp"
#include "bnmf/samplers.hpp"
#include "bnmf/vi.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bnmf {

enum class Method { nvi, gibbs_onvi, hmc_onvi, rrt_onvi, lin_restarts };

[[nodiscard]] std::string to_string(Method m);
[[nodiscard]] Method parse_method(const std::string& name);

struct RunConfig {
  // Dataset: "synthetic" (two-NMF toy) or "file".
  std::string data_source{"synthetic"};
  std::filesystem::path data_path;
  MatrixFormat data_format{MatrixFormat::dense_csv};
  Index synthetic_D{60};
  Index synthetic_N{60};
  double synthetic_noise{0.01};
  std::uint64_t synthetic_seed{0};

  Index R{3};
  LikelihoodKind likelihood{LikelihoodKind::uniform};
  std::string sigma2{"empirical"};  // empirical | empirical_x10 | number
  std::string eps{"empirical"};     // empirical | number
  int noise_restarts{10};
  NoiseEstimate noise_estimate{NoiseEstimate::first};
  double prior_rate{1.0};
  ScaleObjective scale_objective{ScaleObjective::as_displayed};

  Method method{Method::rrt_onvi};
  int nvi_M{4};
  NviOptions nvi{};
  OnviCriteria onvi{};
  RrtConfig rrt{};
  HmcOptions hmc{};
  GibbsOptions gibbs{};
  LinOptions lin{};
  int lin_restarts{10};

  int repetitions{10};
  std::uint64_t seed{0};

  // Throws ConfigError listing every unknown key and bad value.
  static RunConfig from_keys(const KeyValueConfig& keys);
  // Every setting, defaults included.
  [[nodiscard]] KeyValueConfig resolved() const;
  void validate() const;
};

[[nodiscard]] Dataset load_dataset(const RunConfig& config);

struct RepetitionOutput {
  std::uint64_t seed{0};
  VariationalMixture mixture;
  double elbo{0.0};
  double sigma2{0.0};
  double eps{0.0};
  std::size_t proposals{0};
  std::size_t accepted{0};
  PersistenceCurve persistence;
  std::size_t cover_at_001{0};
  std::map<std::string, std::string> extra;  // method-specific summary fields
  std::map<std::string, std::string> logs;   // file name -> CSV contents
};

// One repetition of the configured method on X with the given seed.
[[nodiscard]] RepetitionOutput run_repetition(const RunConfig& config,
                                              const Matrix& X,
                                              std::uint64_t seed);

// Decoded factorizations of every mixture component.
[[nodiscard]] std::vector<Factorization> component_factorizations(
    const VariationalMixture& mix, Index D, Index N, Index R);

struct RunSummary {
  int exit_code{0};
  std::size_t succeeded{0};
  std::size_t failed{0};
  std::vector<std::string> errors;
};

// Runs all repetitions (seed + index) on up to `workers` threads and writes
// the run directory.
RunSummary run_experiment(const RunConfig& config,
                          const std::filesystem::path& out_dir, int workers = 1);

struct ReportRow {
  std::string method;
  std::size_t repetitions{0};
  double mean_elbo{0.0};
  double q25_elbo{0.0};
  double q75_elbo{0.0};
  double mean_components{0.0};
  double q25_components{0.0};
  double q75_components{0.0};
  double mean_cover{0.0};
};

struct ReportResult {
  int exit_code{0};
  std::vector<ReportRow> rows;
  std::vector<std::string> problems;
  std::string table;
};

// Scans run_dir recursively for repetition summaries, renders the table and
// writes report.txt, report.csv and persistence_all.csv into out_dir.
ReportResult report(const std::filesystem::path& run_dir,
                    const std::filesystem::path& out_dir);

// Linear-interpolation quantile of an unsorted sample.
[[nodiscard]] double quantile(std::vector<double> values, double q);

[[nodiscard]] std::string format_sig6(double v);

}  // namespace bnmf
