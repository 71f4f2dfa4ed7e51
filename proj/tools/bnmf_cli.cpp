#include "bnmf/experiment.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>

namespace fs = std::filesystem;
using namespace bnmf;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int workers{1};
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOptions& o, bool out_required = true) {
  app->add_option("--config", o.config, "key = value config file");
  auto* out = app->add_option("--out", o.out, "output directory");
  if (out_required) out->required();
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("--workers", o.workers, "parallel repetitions")->check(CLI::PositiveNumber);
  app->add_option("--override", o.overrides, "key=value (repeatable)");
}

KeyValueConfig gather(const CommonOptions& o,
                      const std::vector<std::pair<std::string, std::string>>& forced = {}) {
  KeyValueConfig kv = o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
  for (const auto& [k, v] : forced) kv.set(k, v);
  for (const auto& a : o.overrides) kv.apply_override(a);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  return kv;
}

int run_with(const CommonOptions& o,
             const std::vector<std::pair<std::string, std::string>>& forced) {
  const RunConfig cfg = RunConfig::from_keys(gather(o, forced));
  const RunSummary s = run_experiment(cfg, o.out, o.workers);
  for (const auto& e : s.errors) std::cerr << "error: " << e << '\n';
  std::ifstream table(fs::path(o.out) / "report.txt");
  std::cout << table.rdbuf();
  return s.exit_code;
}

int cmd_solve(const CommonOptions& o, int restarts) {
  const RunConfig cfg = RunConfig::from_keys(gather(o));
  const Dataset data = load_dataset(cfg);
  const auto fits = lin_restarts(data.X, cfg.R, restarts, cfg.seed, cfg.lin);
  const EmpiricalNoise noise = empirical_noise(data.X, fits, cfg.noise_estimate);
  fs::create_directories(o.out);
  std::ofstream summary(fs::path(o.out) / "solve.csv");
  summary << std::setprecision(17) << "restart,seed,squared_error,max_abs_residual\n";
  for (std::size_t i = 0; i < fits.size(); ++i) {
    const std::string stem = "fit_" + std::to_string(i);
    write_csv(fs::path(o.out) / (stem + "_A.csv"), fits[i].A);
    write_csv(fs::path(o.out) / (stem + "_W.csv"), fits[i].W);
    summary << i << ',' << cfg.seed + i << ',' << (data.X - fits[i].reconstruct()).squaredNorm()
            << ',' << max_abs_residual(data.X, fits[i]) << '\n';
  }
  std::cout << std::setprecision(6) << "sigma2_emp = " << noise.sigma2
            << "\neps_emp = " << noise.eps << '\n';
  return 0;
}

int cmd_svd(const CommonOptions& o) {
  const RunConfig cfg = RunConfig::from_keys(gather(o));
  const Dataset data = load_dataset(cfg);
  const SvdPair svd = truncated_svd(data.X, cfg.R);
  fs::create_directories(o.out);
  write_csv(fs::path(o.out) / "A_svd.csv", svd.A_svd);
  write_csv(fs::path(o.out) / "W_svd.csv", svd.W_svd);
  write_csv(fs::path(o.out) / "singular_values.csv", svd.singular_values);
  return 0;
}

int cmd_sample_raw(const CommonOptions& o, const std::string& sampler) {
  const RunConfig cfg = RunConfig::from_keys(gather(o));
  const Dataset data = load_dataset(cfg);
  const Index D = data.X.rows(), N = data.X.cols();
  const auto fits = lin_restarts(data.X, cfg.R, cfg.noise_restarts, cfg.seed, cfg.lin);
  const EmpiricalNoise noise = empirical_noise(data.X, fits, cfg.noise_estimate);
  const bool gaussian = cfg.likelihood == LikelihoodKind::gaussian;
  ModelSpec spec = gaussian ? ModelSpec::gaussian(D, N, cfg.R, 1.0, cfg.prior_rate)
                            : ModelSpec::uniform(D, N, cfg.R, 1.0, cfg.prior_rate);
  if (gaussian) {
    spec.sigma2 = cfg.sigma2 == "empirical"       ? noise.sigma2
                  : cfg.sigma2 == "empirical_x10" ? 10.0 * noise.sigma2
                                                  : std::stod(cfg.sigma2);
  } else {
    spec.eps = cfg.eps == "empirical" ? noise.eps : std::stod(cfg.eps);
  }
  const Factorization* init = &fits.front();
  for (const auto& f : fits)
    if (std::isfinite(log_joint(data.X, f, spec))) {
      init = &f;
      break;
    }
  const ChainReport rep = sampler == "gibbs"
                              ? gibbs_run(data.X, spec, *init, cfg.seed, cfg.gibbs)
                              : hmc_run(data.X, spec, *init, cfg.seed, cfg.hmc);
  fs::create_directories(o.out);
  std::ofstream trace(fs::path(o.out) / "chain_trace.csv");
  write_chain_trace(trace, rep);
  for (std::size_t i = 0; i < rep.snapshots.size(); ++i) {
    const std::string stem = "snapshot_" + std::to_string(i);
    write_csv(fs::path(o.out) / (stem + "_A.csv"), rep.snapshots[i].A);
    write_csv(fs::path(o.out) / (stem + "_W.csv"), rep.snapshots[i].W);
  }
  std::cout << "samples = " << rep.samples << '\n';
  if (sampler == "hmc")
    std::cout << std::setprecision(6) << "acceptance = " << rep.acceptance
              << "\nstep_size = " << rep.step_size << '\n';
  return 0;
}

Matrix read_csv(const fs::path& p) { return load_matrix(p, MatrixFormat::dense_csv).X; }

int cmd_metrics(const std::string& dir, const std::string& mixture, double epsilon,
                const std::string& out) {
  std::vector<Factorization> samples;
  if (!mixture.empty()) {
    std::ifstream in(mixture);
    if (!in) throw std::runtime_error("cannot open " + mixture);
    const MixtureRecord rec = read_mixture(in);
    samples = component_factorizations(rec.mixture, rec.D, rec.N, rec.R);
  } else {
    std::vector<fs::path> bases;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.size() > 6 && name.substr(name.size() - 6) == "_A.csv")
        bases.push_back(e.path().parent_path() / name.substr(0, name.size() - 6));
    }
    std::sort(bases.begin(), bases.end());
    for (const auto& b : bases) {
      const fs::path wpath = b.string() + "_W.csv";
      if (!fs::exists(wpath)) continue;
      samples.push_back({read_csv(b.string() + "_A.csv"), read_csv(wpath)});
    }
  }
  if (samples.empty()) throw std::runtime_error("no factorizations found");
  const Matrix pw = pairwise_wad(samples);
  const PersistenceCurve curve = persistence_curve(pw, default_epsilon_grid());
  if (!out.empty()) {
    fs::create_directories(out);
    write_csv(fs::path(out) / "pairwise_wad.csv", pw);
    std::ofstream pc(fs::path(out) / "persistence.csv");
    write_persistence_csv(pc, curve);
  }
  std::cout << "samples = " << samples.size() << "\ncovering_number(" << format_sig6(epsilon)
            << ") = " << covering_number(pw, epsilon) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian NMF posterior exploration toolkit"};
  app.require_subcommand(1);

  CommonOptions run_o, nvi_o, sample_o, explore_o, solve_o, svd_o;
  auto* run = app.add_subcommand("run", "run a configured experiment");
  add_common(run, run_o);

  auto* nvi = app.add_subcommand("nvi", "batch NVI");
  add_common(nvi, nvi_o);
  std::optional<int> nvi_m;
  nvi->add_option("--M", nvi_m, "number of components");

  auto* sample = app.add_subcommand("sample", "Gibbs or HMC chain");
  add_common(sample, sample_o);
  std::string sampler = "hmc";
  bool no_onvi = false;
  sample->add_option("--sampler", sampler)->check(CLI::IsMember({"gibbs", "hmc"}));
  sample->add_flag("--no-onvi", no_onvi, "write the raw chain instead of an ONVI mixture");

  auto* explore_cmd = app.add_subcommand("explore", "RRT exploration feeding ONVI");
  add_common(explore_cmd, explore_o);

  auto* solve = app.add_subcommand("solve", "Lin projected-gradient restarts");
  add_common(solve, solve_o);
  int restarts = 10;
  solve->add_option("--restarts", restarts)->check(CLI::PositiveNumber);

  auto* svd = app.add_subcommand("svd", "truncated SVD factors");
  add_common(svd, svd_o);

  auto* metrics = app.add_subcommand("metrics", "WAD / covering number / persistence");
  std::string m_dir, m_mix, m_out;
  double m_eps = 0.01;
  metrics->add_option("--dir", m_dir, "directory of <name>_A.csv / <name>_W.csv pairs");
  metrics->add_option("--mixture", m_mix, "mixture.json whose components are measured");
  metrics->add_option("--epsilon", m_eps, "covering radius in degrees");
  metrics->add_option("--out", m_out, "output directory");

  auto* gen = app.add_subcommand("gen", "synthetic two-NMF dataset");
  Index g_D = 500, g_N = 500;
  double g_noise = 0.01;
  std::uint64_t g_seed = 0;
  std::string g_out;
  gen->add_option("--D", g_D);
  gen->add_option("--N", g_N);
  gen->add_option("--noise", g_noise);
  gen->add_option("--seed", g_seed);
  gen->add_option("--out", g_out)->required();

  auto* rep = app.add_subcommand("report", "summarize run directories");
  std::string r_dir, r_out;
  rep->add_option("dir", r_dir)->required();
  rep->add_option("--out", r_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_with(run_o, {});
    if (*nvi) {
      std::vector<std::pair<std::string, std::string>> f{{"method", "nvi"}};
      if (nvi_m) f.emplace_back("nvi.M", std::to_string(*nvi_m));
      return run_with(nvi_o, f);
    }
    if (*sample) {
      if (no_onvi) return cmd_sample_raw(sample_o, sampler);
      return run_with(sample_o, {{"method", sampler + "_onvi"}});
    }
    if (*explore_cmd) return run_with(explore_o, {{"method", "rrt_onvi"}});
    if (*solve) return cmd_solve(solve_o, restarts);
    if (*svd) return cmd_svd(svd_o);
    if (*metrics) {
      if (m_dir.empty() == m_mix.empty()) {
        std::cerr << "metrics: give exactly one of --dir or --mixture\n";
        return 1;
      }
      return cmd_metrics(m_dir, m_mix, m_eps, m_out);
    }
    if (*gen) {
      const Dataset ds = gen_two_nmf_toy(g_D, g_N, g_noise, g_seed);
      write_dataset(g_out, ds);
      std::cout << "wrote " << (fs::path(g_out) / "data.csv").string() << " ("
                << ds.X.rows() << "x" << ds.X.cols() << ")\n";
      return 0;
    }
    if (*rep) {
      const ReportResult r = report(r_dir, r_out.empty() ? r_dir : r_out);
      for (const auto& p : r.problems) std::cerr << "problem: " << p << '\n';
      std::cout << r.table;
      return r.exit_code;
    }
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) std::cerr << "config error: " << p << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
