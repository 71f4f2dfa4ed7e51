#include "bnmf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace bnmf {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string full(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("'" + s + "' is not a number");
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("'" + s + "' is not an integer");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("'" + s + "' is not a nonnegative integer");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("'" + s + "' is not a boolean");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(std::string key, T RunConfig::*member) {
  return {std::move(key), [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member](RunConfig& c, const std::string& v) { c.*member = static_cast<T>(to_int(v)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&](std::string key, std::function<std::string(const RunConfig&)> get,
                   std::function<void(RunConfig&, const std::string&)> set) {
      f.push_back({std::move(key), std::move(get), std::move(set)});
    };
    add("data.source", [](const RunConfig& c) { return c.data_source; },
        [](RunConfig& c, const std::string& v) {
          if (v != "synthetic" && v != "file")
            throw std::invalid_argument("must be synthetic or file");
          c.data_source = v;
        });
    add("data.path", [](const RunConfig& c) { return c.data_path.string(); },
        [](RunConfig& c, const std::string& v) { c.data_path = v; });
    add("data.format",
        [](const RunConfig& c) {
          return std::string(c.data_format == MatrixFormat::dense_csv ? "csv" : "coordinate");
        },
        [](RunConfig& c, const std::string& v) { c.data_format = parse_matrix_format(v); });
    f.push_back(int_field("data.synthetic.D", &RunConfig::synthetic_D));
    f.push_back(int_field("data.synthetic.N", &RunConfig::synthetic_N));
    add("data.synthetic.noise_eps", [](const RunConfig& c) { return full(c.synthetic_noise); },
        [](RunConfig& c, const std::string& v) { c.synthetic_noise = to_double(v); });
    add("data.synthetic.seed", [](const RunConfig& c) { return std::to_string(c.synthetic_seed); },
        [](RunConfig& c, const std::string& v) { c.synthetic_seed = to_u64(v); });

    f.push_back(int_field("model.R", &RunConfig::R));
    add("model.likelihood",
        [](const RunConfig& c) {
          return std::string(c.likelihood == LikelihoodKind::gaussian ? "gaussian" : "uniform");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "gaussian") c.likelihood = LikelihoodKind::gaussian;
          else if (v == "uniform") c.likelihood = LikelihoodKind::uniform;
          else throw std::invalid_argument("must be gaussian or uniform");
        });
    add("model.sigma2", [](const RunConfig& c) { return c.sigma2; },
        [](RunConfig& c, const std::string& v) {
          if (v != "empirical" && v != "empirical_x10" && !(to_double(v) > 0.0))
            throw std::invalid_argument("must be empirical, empirical_x10 or a positive number");
          c.sigma2 = v;
        });
    add("model.eps", [](const RunConfig& c) { return c.eps; },
        [](RunConfig& c, const std::string& v) {
          if (v != "empirical" && !(to_double(v) > 0.0))
            throw std::invalid_argument("must be empirical or a positive number");
          c.eps = v;
        });
    f.push_back(int_field("model.noise_restarts", &RunConfig::noise_restarts));
    add("model.noise_estimate",
        [](const RunConfig& c) {
          switch (c.noise_estimate) {
            case NoiseEstimate::first: return std::string("first");
            case NoiseEstimate::best: return std::string("best");
            case NoiseEstimate::mean: return std::string("mean");
          }
          return std::string("first");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "first") c.noise_estimate = NoiseEstimate::first;
          else if (v == "best") c.noise_estimate = NoiseEstimate::best;
          else if (v == "mean") c.noise_estimate = NoiseEstimate::mean;
          else throw std::invalid_argument("must be first, best or mean");
        });
    add("model.prior_rate", [](const RunConfig& c) { return full(c.prior_rate); },
        [](RunConfig& c, const std::string& v) { c.prior_rate = to_double(v); });
    add("model.scale_objective",
        [](const RunConfig& c) {
          return std::string(c.scale_objective == ScaleObjective::as_displayed ? "as_displayed"
                                                                               : "beta_squared");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "as_displayed") c.scale_objective = ScaleObjective::as_displayed;
          else if (v == "beta_squared") c.scale_objective = ScaleObjective::beta_squared;
          else throw std::invalid_argument("must be as_displayed or beta_squared");
        });

    add("method", [](const RunConfig& c) { return to_string(c.method); },
        [](RunConfig& c, const std::string& v) { c.method = parse_method(v); });
    f.push_back(int_field("nvi.M", &RunConfig::nvi_M));
    add("nvi.max_iter", [](const RunConfig& c) { return std::to_string(c.nvi.max_iter); },
        [](RunConfig& c, const std::string& v) { c.nvi.max_iter = static_cast<int>(to_int(v)); });
    add("nvi.tol", [](const RunConfig& c) { return full(c.nvi.abs_tol); },
        [](RunConfig& c, const std::string& v) { c.nvi.abs_tol = to_double(v); });
    add("nvi.cg_rel_tol", [](const RunConfig& c) { return full(c.nvi.optimizer.cg_rel_tol); },
        [](RunConfig& c, const std::string& v) { c.nvi.optimizer.cg_rel_tol = to_double(v); });
    add("nvi.analytic_gradient", [](const RunConfig& c) { return bool_str(c.nvi.analytic_gradient); },
        [](RunConfig& c, const std::string& v) { c.nvi.analytic_gradient = to_bool(v); });

    add("onvi.min_gain", [](const RunConfig& c) { return full(c.onvi.min_gain); },
        [](RunConfig& c, const std::string& v) { c.onvi.min_gain = to_double(v); });
    add("onvi.reoptimize_weights",
        [](const RunConfig& c) { return bool_str(c.onvi.reoptimize_weights); },
        [](RunConfig& c, const std::string& v) { c.onvi.reoptimize_weights = to_bool(v); });
    add("onvi.prune", [](const RunConfig& c) { return bool_str(c.onvi.prune); },
        [](RunConfig& c, const std::string& v) { c.onvi.prune = to_bool(v); });

    add("rrt.s0", [](const RunConfig& c) { return full(c.rrt.s0); },
        [](RunConfig& c, const std::string& v) { c.rrt.s0 = to_double(v); });
    add("rrt.growth", [](const RunConfig& c) { return full(c.rrt.growth); },
        [](RunConfig& c, const std::string& v) { c.rrt.growth = to_double(v); });
    add("rrt.max_extend_steps", [](const RunConfig& c) { return std::to_string(c.rrt.max_extend_steps); },
        [](RunConfig& c, const std::string& v) { c.rrt.max_extend_steps = static_cast<int>(to_int(v)); });
    add("rrt.max_temp_nodes",
        [](const RunConfig& c) {
          return c.rrt.max_temp_nodes ? std::to_string(*c.rrt.max_temp_nodes) : std::string("auto");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "auto") c.rrt.max_temp_nodes.reset();
          else c.rrt.max_temp_nodes = static_cast<std::size_t>(to_u64(v));
        });
    add("rrt.min_angle_deg", [](const RunConfig& c) { return full(c.rrt.min_angle_deg); },
        [](RunConfig& c, const std::string& v) { c.rrt.min_angle_deg = to_double(v); });
    add("rrt.min_angle_increment", [](const RunConfig& c) { return full(c.rrt.min_angle_increment); },
        [](RunConfig& c, const std::string& v) { c.rrt.min_angle_increment = to_double(v); });
    add("rrt.max_onvi_components",
        [](const RunConfig& c) { return std::to_string(c.rrt.max_onvi_components); },
        [](RunConfig& c, const std::string& v) { c.rrt.max_onvi_components = to_u64(v); });
    add("rrt.max_failed_attempts",
        [](const RunConfig& c) { return std::to_string(c.rrt.max_failed_attempts); },
        [](RunConfig& c, const std::string& v) { c.rrt.max_failed_attempts = to_u64(v); });
    add("rrt.n_init_restarts",
        [](const RunConfig& c) {
          return c.rrt.n_init_restarts ? std::to_string(*c.rrt.n_init_restarts) : std::string("auto");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "auto") c.rrt.n_init_restarts.reset();
          else c.rrt.n_init_restarts = static_cast<int>(to_int(v));
        });
    add("rrt.threshold_referent",
        [](const RunConfig& c) {
          return std::string(c.rrt.threshold_referent == ThresholdReferent::best_node
                                 ? "best_node"
                                 : "best_component");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "best_node") c.rrt.threshold_referent = ThresholdReferent::best_node;
          else if (v == "best_component") c.rrt.threshold_referent = ThresholdReferent::best_component;
          else throw std::invalid_argument("must be best_node or best_component");
        });
    add("rrt.propose_base_nodes", [](const RunConfig& c) { return bool_str(c.rrt.propose_base_nodes); },
        [](RunConfig& c, const std::string& v) { c.rrt.propose_base_nodes = to_bool(v); });
    add("rrt.max_extends", [](const RunConfig& c) { return std::to_string(c.rrt.max_extends); },
        [](RunConfig& c, const std::string& v) { c.rrt.max_extends = to_u64(v); });

    add("hmc.n_samples", [](const RunConfig& c) { return std::to_string(c.hmc.n_samples); },
        [](RunConfig& c, const std::string& v) { c.hmc.n_samples = to_u64(v); });
    add("hmc.leapfrog_steps", [](const RunConfig& c) { return std::to_string(c.hmc.leapfrog_steps); },
        [](RunConfig& c, const std::string& v) { c.hmc.leapfrog_steps = static_cast<int>(to_int(v)); });
    add("hmc.target_acceptance", [](const RunConfig& c) { return full(c.hmc.target_acceptance); },
        [](RunConfig& c, const std::string& v) { c.hmc.target_acceptance = to_double(v); });
    add("hmc.adapt_fraction", [](const RunConfig& c) { return full(c.hmc.adapt_fraction); },
        [](RunConfig& c, const std::string& v) { c.hmc.adapt_fraction = to_double(v); });
    add("hmc.initial_step", [](const RunConfig& c) { return full(c.hmc.initial_step); },
        [](RunConfig& c, const std::string& v) { c.hmc.initial_step = to_double(v); });
    add("gibbs.n_samples", [](const RunConfig& c) { return std::to_string(c.gibbs.n_samples); },
        [](RunConfig& c, const std::string& v) { c.gibbs.n_samples = to_u64(v); });

    add("lin.tol", [](const RunConfig& c) { return full(c.lin.tol); },
        [](RunConfig& c, const std::string& v) { c.lin.tol = to_double(v); });
    add("lin.max_iter", [](const RunConfig& c) { return std::to_string(c.lin.max_iter); },
        [](RunConfig& c, const std::string& v) { c.lin.max_iter = static_cast<int>(to_int(v)); });
    f.push_back(int_field("lin.restarts", &RunConfig::lin_restarts));

    f.push_back(int_field("repetitions", &RunConfig::repetitions));
    add("seed", [](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); });
    return f;
  }();
  return table;
}

double parse_sigma2(const std::string& v, const EmpiricalNoise& noise) {
  if (v == "empirical") return noise.sigma2;
  if (v == "empirical_x10") return 10.0 * noise.sigma2;
  return to_double(v);
}

std::string onvi_log_csv(const OnviSink& sink) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "index,quality,outcome,gain,required_gain,components,elbo\n";
  for (const auto& e : sink.log())
    os << e.index << ',' << e.quality << ',' << to_string(e.outcome) << ',' << e.gain << ','
       << e.required_gain << ',' << e.components << ',' << e.elbo << '\n';
  return os.str();
}

std::map<std::string, std::string> read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const KeyValueConfig kv = KeyValueConfig::parse(in);
  return kv.entries();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string rep_name(int index) {
  std::ostringstream os;
  os << "rep_" << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::nvi: return "nvi";
    case Method::gibbs_onvi: return "gibbs_onvi";
    case Method::hmc_onvi: return "hmc_onvi";
    case Method::rrt_onvi: return "rrt_onvi";
    case Method::lin_restarts: return "lin_restarts";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "nvi") return Method::nvi;
  if (name == "gibbs_onvi") return Method::gibbs_onvi;
  if (name == "hmc_onvi") return Method::hmc_onvi;
  if (name == "rrt_onvi") return Method::rrt_onvi;
  if (name == "lin_restarts") return Method::lin_restarts;
  throw std::invalid_argument("unknown method '" + name + "'");
}

RunConfig RunConfig::from_keys(const KeyValueConfig& keys) {
  RunConfig cfg;
  std::vector<std::string> problems;
  for (const auto& [key, value] : keys.entries()) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const Field& f) { return f.key == key; });
    if (it == table.end()) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      it->set(cfg, value);
    } catch (const std::exception& e) {
      problems.push_back(key + ": " + e.what());
    }
  }
  if (problems.empty()) {
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      problems = e.problems();
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

KeyValueConfig RunConfig::resolved() const {
  KeyValueConfig kv;
  for (const auto& f : fields()) kv.set(f.key, f.get(*this));
  return kv;
}

void RunConfig::validate() const {
  std::vector<std::string> p;
  if (data_source == "file" && data_path.empty()) p.push_back("data.path is required for file data");
  if (synthetic_D < 4 || synthetic_N < 4) p.push_back("data.synthetic.D and .N must be >= 4");
  if (!(synthetic_noise >= 0.0)) p.push_back("data.synthetic.noise_eps must be >= 0");
  if (R < 1) p.push_back("model.R must be >= 1");
  if (noise_restarts < 1) p.push_back("model.noise_restarts must be >= 1");
  if (!(prior_rate > 0.0)) p.push_back("model.prior_rate must be > 0");
  if (nvi_M < 1) p.push_back("nvi.M must be >= 1");
  if (nvi.max_iter < 1) p.push_back("nvi.max_iter must be >= 1");
  if (!(nvi.abs_tol > 0.0)) p.push_back("nvi.tol must be > 0");
  if (!(nvi.optimizer.cg_rel_tol > 0.0 && nvi.optimizer.cg_rel_tol < 1.0))
    p.push_back("nvi.cg_rel_tol must be in (0, 1)");
  if (!(onvi.min_gain >= 0.0)) p.push_back("onvi.min_gain must be >= 0");
  try {
    rrt.validate();
  } catch (const std::exception& e) {
    p.push_back(e.what());
  }
  if (hmc.n_samples < 1) p.push_back("hmc.n_samples must be >= 1");
  if (hmc.leapfrog_steps < 0) p.push_back("hmc.leapfrog_steps must be >= 0");
  if (!(hmc.target_acceptance > 0.0 && hmc.target_acceptance < 1.0))
    p.push_back("hmc.target_acceptance must lie in (0, 1)");
  if (!(hmc.adapt_fraction >= 0.0 && hmc.adapt_fraction < 1.0))
    p.push_back("hmc.adapt_fraction must lie in [0, 1)");
  if (gibbs.n_samples < 1) p.push_back("gibbs.n_samples must be >= 1");
  if (!(lin.tol > 0.0)) p.push_back("lin.tol must be > 0");
  if (lin.max_iter < 1) p.push_back("lin.max_iter must be >= 1");
  if (lin_restarts < 1) p.push_back("lin.restarts must be >= 1");
  if (repetitions < 1) p.push_back("repetitions must be >= 1");
  if (method == Method::gibbs_onvi && likelihood == LikelihoodKind::uniform)
    p.push_back("gibbs_onvi requires model.likelihood = gaussian");
  if (!p.empty()) throw ConfigError(std::move(p));
}

Dataset load_dataset(const RunConfig& config) {
  if (config.data_source == "file") return load_matrix(config.data_path, config.data_format);
  return gen_two_nmf_toy(config.synthetic_D, config.synthetic_N, config.synthetic_noise,
                         config.synthetic_seed);
}

std::vector<Factorization> component_factorizations(const VariationalMixture& mix,
                                                    Index D, Index N, Index R) {
  std::vector<Factorization> out;
  out.reserve(mix.size());
  for (const auto& c : mix.components) out.push_back(decode(c.mu, D, N, R));
  return out;
}

RepetitionOutput run_repetition(const RunConfig& config, const Matrix& X,
                                std::uint64_t seed) {
  const Index D = X.rows();
  const Index N = X.cols();
  const Index R = config.R;
  const bool gaussian = config.likelihood == LikelihoodKind::gaussian;

  int needed = config.noise_restarts;
  if (config.method == Method::rrt_onvi) needed = std::max(needed, config.rrt.restarts(gaussian));
  if (config.method == Method::nvi && gaussian) needed = std::max(needed, config.nvi_M);
  if (config.method == Method::lin_restarts) needed = std::max(needed, config.lin_restarts);
  const std::vector<Factorization> fits = lin_restarts(X, R, needed, seed, config.lin);
  const EmpiricalNoise noise = empirical_noise(
      X, std::vector<Factorization>(fits.begin(), fits.begin() + config.noise_restarts),
      config.noise_estimate);

  ModelSpec spec = gaussian ? ModelSpec::gaussian(D, N, R, 1.0, config.prior_rate)
                            : ModelSpec::uniform(D, N, R, 1.0, config.prior_rate);
  spec.scale_objective = config.scale_objective;
  if (gaussian) spec.sigma2 = parse_sigma2(config.sigma2, noise);
  else spec.eps = config.eps == "empirical" ? noise.eps : to_double(config.eps);
  spec.validate();

  RepetitionOutput out;
  out.seed = seed;
  out.sigma2 = spec.sigma2;
  out.eps = spec.eps;
  out.extra["rank"] = std::to_string(R);

  auto feasible_fit = [&]() -> const Factorization& {
    for (const auto& f : fits)
      if (std::isfinite(log_joint(X, f, spec))) return f;
    throw std::runtime_error("no Lin restart lies strictly inside the Uniform support");
  };

  switch (config.method) {
    case Method::nvi: {
      std::vector<Factorization> init;
      if (gaussian) {
        init.assign(fits.begin(), fits.begin() + config.nvi_M);
      } else {
        init.assign(static_cast<std::size_t>(config.nvi_M), feasible_fit());
      }
      const NviResult r = nvi_fit(X, spec, init, config.nvi);
      out.mixture = r.mixture;
      out.elbo = r.elbo;
      out.extra["iterations"] = std::to_string(r.iterations);
      out.extra["converged"] = bool_str(r.converged);
      break;
    }
    case Method::gibbs_onvi: {
      OnviSink sink(X, spec, config.onvi, config.nvi);
      const ChainReport rep = gibbs_run(X, spec, fits.front(), seed, config.gibbs, &sink);
      out.mixture = sink.mixture();
      out.elbo = sink.elbo();
      out.proposals = sink.processed();
      out.accepted = rep.accepted_proposals;
      out.logs["onvi_log.csv"] = onvi_log_csv(sink);
      std::ostringstream trace;
      write_chain_trace(trace, rep);
      out.logs["chain_trace.csv"] = trace.str();
      break;
    }
    case Method::hmc_onvi: {
      OnviSink sink(X, spec, config.onvi, config.nvi);
      const ChainReport rep = hmc_run(X, spec, feasible_fit(), seed, config.hmc, &sink);
      out.mixture = sink.mixture();
      out.elbo = sink.elbo();
      out.proposals = sink.processed();
      out.accepted = rep.accepted_proposals;
      out.extra["hmc_acceptance"] = full(rep.acceptance);
      out.extra["hmc_adapt_acceptance"] = full(rep.adapt_acceptance);
      out.extra["hmc_step_size"] = full(rep.step_size);
      out.logs["onvi_log.csv"] = onvi_log_csv(sink);
      std::ostringstream trace;
      write_chain_trace(trace, rep);
      out.logs["chain_trace.csv"] = trace.str();
      break;
    }
    case Method::rrt_onvi: {
      OnviSink sink(X, spec, config.onvi, config.nvi);
      RrtConfig rc = config.rrt;
      rc.seed = seed;
      rc.lin = config.lin;
      rc.nvi = config.nvi;
      const auto n_init = static_cast<std::size_t>(rc.restarts(gaussian));
      const RrtReport rep = explore(X, spec, rc, sink,
                                    std::vector<Factorization>(fits.begin(), fits.begin() + n_init));
      out.mixture = sink.mixture();
      out.elbo = sink.elbo();
      out.proposals = sink.processed();
      out.accepted = rep.accepted;
      out.extra["rrt_termination"] = to_string(rep.termination);
      out.extra["rrt_extends"] = std::to_string(rep.extends);
      out.extra["rrt_advanced"] = std::to_string(rep.advanced);
      out.extra["rrt_restarts"] = std::to_string(rep.restarts);
      out.extra["rrt_final_nodes"] = std::to_string(rep.final_nodes);
      out.logs["onvi_log.csv"] = onvi_log_csv(sink);
      std::ostringstream log;
      write_rrt_log(log, rep);
      out.logs["rrt_log.csv"] = log.str();
      if (out.mixture.empty()) throw std::runtime_error("exploration produced no feasible component");
      break;
    }
    case Method::lin_restarts: {
      const NmfLogJoint density(X, spec);
      std::vector<Vector> mus;
      std::vector<double> s2;
      for (int i = 0; i < config.lin_restarts; ++i) {
        const Vector mu = flatten(fits[static_cast<std::size_t>(i)]);
        if (gaussian) {
          const double tr = density.hessian_trace(mu);
          s2.push_back(tr < 0.0 ? -static_cast<double>(mu.size()) / tr : 1.0);
        } else {
          const double r = max_box_radius(density, mu);
          if (!(r > 0.0)) continue;
          s2.push_back(std::isfinite(r) ? 0.25 * r * r : 1.0);
        }
        mus.push_back(mu);
      }
      if (mus.empty()) throw std::runtime_error("no Lin restart lies strictly inside the Uniform support");
      out.mixture = VariationalMixture::uniform(std::move(mus), std::move(s2));
      out.elbo = elbo(out.mixture, density);
      break;
    }
  }

  const std::vector<Factorization> comps = component_factorizations(out.mixture, D, N, R);
  const Matrix pw = pairwise_wad(comps);
  out.persistence = persistence_curve(pw, default_epsilon_grid());
  out.cover_at_001 = covering_number(pw, 0.01);
  return out;
}

RunSummary run_experiment(const RunConfig& config, const fs::path& out_dir, int workers) {
  config.validate();
  fs::create_directories(out_dir);
  {
    std::ostringstream os;
    config.resolved().write(os);
    write_text(out_dir / "config.resolved.txt", os.str());
  }
  RunSummary summary;
  Dataset data;
  try {
    data = load_dataset(config);
  } catch (const std::exception& e) {
    summary.exit_code = 3;
    summary.failed = static_cast<std::size_t>(config.repetitions);
    summary.errors.push_back(std::string("dataset: ") + e.what());
    return summary;
  }

  std::mutex mu;
  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= config.repetitions) return;
      const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(i);
      const fs::path final_dir = out_dir / rep_name(i);
      const fs::path tmp_dir = out_dir / (rep_name(i) + ".tmp");
      std::error_code ec;
      fs::remove_all(tmp_dir, ec);
      fs::create_directories(tmp_dir);
      try {
        const RepetitionOutput r = run_repetition(config, data.X, seed);
        {
          std::ofstream os(tmp_dir / "mixture.json", std::ios::binary);
          write_mixture(os, {data.X.rows(), data.X.cols(), config.R, r.mixture});
        }
        {
          std::ostringstream os;
          write_persistence_csv(os, r.persistence);
          write_text(tmp_dir / "persistence.csv", os.str());
        }
        for (const auto& [name, text] : r.logs) write_text(tmp_dir / name, text);
        KeyValueConfig s;
        s.set("status", "ok");
        s.set("method", to_string(config.method));
        s.set("seed", std::to_string(seed));
        s.set("elbo", full(r.elbo));
        s.set("components", std::to_string(r.mixture.size()));
        s.set("cover_0.01", std::to_string(r.cover_at_001));
        s.set("sigma2", full(r.sigma2));
        s.set("eps", full(r.eps));
        s.set("proposals", std::to_string(r.proposals));
        s.set("accepted", std::to_string(r.accepted));
        for (const auto& [k, v] : r.extra) s.set(k, v);
        std::ostringstream os;
        s.write(os);
        write_text(tmp_dir / "summary.txt", os.str());
        fs::remove_all(final_dir, ec);
        fs::rename(tmp_dir, final_dir);
        std::lock_guard lock(mu);
        ++summary.succeeded;
      } catch (const std::exception& e) {
        write_text(tmp_dir / "error.txt", std::string(e.what()) + "\n");
        fs::remove_all(final_dir, ec);
        fs::rename(tmp_dir, final_dir, ec);
        std::lock_guard lock(mu);
        ++summary.failed;
        summary.errors.push_back(rep_name(i) + ": " + e.what());
      }
    }
  };
  const int n_threads = std::clamp(workers, 1, config.repetitions);
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::sort(summary.errors.begin(), summary.errors.end());

  if (summary.failed == 0) summary.exit_code = 0;
  else if (summary.succeeded == 0) summary.exit_code = 3;
  else summary.exit_code = 2;
  report(out_dir, out_dir);
  return summary;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::string format_sig6(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

ReportResult report(const fs::path& run_dir, const fs::path& out_dir) {
  ReportResult res;
  std::vector<fs::path> summaries;
  std::error_code ec;
  if (fs::is_directory(run_dir, ec)) {
    for (auto it = fs::recursive_directory_iterator(run_dir, ec);
         !ec && it != fs::recursive_directory_iterator(); it.increment(ec))
      if (it->is_regular_file() && it->path().filename() == "summary.txt")
        summaries.push_back(it->path());
  } else {
    res.problems.push_back(run_dir.string() + ": not a directory");
  }
  std::sort(summaries.begin(), summaries.end());

  struct Acc {
    std::vector<double> elbo, comps, cover;
  };
  std::map<std::string, Acc> groups;
  std::ostringstream persist;
  persist << "method,repetition,epsilon_degrees,covering_number\n";
  for (const auto& path : summaries) {
    try {
      const auto s = read_summary(path);
      auto need = [&](const std::string& k) {
        const auto it = s.find(k);
        if (it == s.end()) throw std::runtime_error("missing key '" + k + "'");
        return it->second;
      };
      if (need("status") != "ok") continue;
      const std::string method = need("method");
      const double e = need("elbo") == "-inf" ? -kInf : to_double(need("elbo"));
      const double c = to_double(need("components"));
      const double cov = to_double(need("cover_0.01"));
      const fs::path pfile = path.parent_path() / "persistence.csv";
      std::ifstream pin(pfile);
      if (!pin) throw std::runtime_error("missing persistence.csv");
      std::string line;
      std::getline(pin, line);
      std::ostringstream rows;
      while (std::getline(pin, line))
        if (!line.empty())
          rows << method << ',' << fs::relative(path.parent_path(), run_dir).generic_string()
               << ',' << line << '\n';
      auto& g = groups[method];
      g.elbo.push_back(e);
      g.comps.push_back(c);
      g.cover.push_back(cov);
      persist << rows.str();
    } catch (const std::exception& ex) {
      res.problems.push_back(path.string() + ": " + ex.what());
    }
  }

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::ostringstream table, csv;
  csv << std::setprecision(17);
  csv << "method,repetitions,mean_elbo,q25_elbo,q75_elbo,mean_components,q25_components,"
         "q75_components,mean_cover_0.01\n";
  table << std::left << std::setw(14) << "method" << std::right << std::setw(6) << "reps"
        << std::setw(14) << "mean_elbo" << std::setw(14) << "q25_elbo" << std::setw(14)
        << "q75_elbo" << std::setw(12) << "mean_comp" << std::setw(12) << "cover@0.01" << '\n';
  for (const auto& [method, g] : groups) {
    ReportRow row;
    row.method = method;
    row.repetitions = g.elbo.size();
    row.mean_elbo = mean(g.elbo);
    row.q25_elbo = quantile(g.elbo, 0.25);
    row.q75_elbo = quantile(g.elbo, 0.75);
    row.mean_components = mean(g.comps);
    row.q25_components = quantile(g.comps, 0.25);
    row.q75_components = quantile(g.comps, 0.75);
    row.mean_cover = mean(g.cover);
    table << std::left << std::setw(14) << method << std::right << std::setw(6)
          << row.repetitions << std::setw(14) << format_sig6(row.mean_elbo) << std::setw(14)
          << format_sig6(row.q25_elbo) << std::setw(14) << format_sig6(row.q75_elbo)
          << std::setw(12) << format_sig6(row.mean_components) << std::setw(12)
          << format_sig6(row.mean_cover) << '\n';
    csv << method << ',' << row.repetitions << ',' << row.mean_elbo << ',' << row.q25_elbo << ','
        << row.q75_elbo << ',' << row.mean_components << ',' << row.q25_components << ','
        << row.q75_components << ',' << row.mean_cover << '\n';
    res.rows.push_back(row);
  }
  res.table = table.str();
  try {
    fs::create_directories(out_dir);
    write_text(out_dir / "report.txt", res.table);
    write_text(out_dir / "report.csv", csv.str());
    write_text(out_dir / "persistence_all.csv", persist.str());
  } catch (const std::exception& ex) {
    res.problems.push_back(ex.what());
  }
  if (res.rows.empty()) res.exit_code = 3;
  else if (!res.problems.empty()) res.exit_code = 2;
  else res.exit_code = 0;
  return res;
}

}  // namespace bnmf
