#include "copglmm/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace copglmm {

ScenarioConfig reference_scenario(MarginalFamily marginal, CopulaFamily copula, int m, int replications,
                                  std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.name = to_string(marginal) + "-" + to_string(copula);
  cfg.m = m;
  cfg.replications = replications;
  cfg.seed = seed;
  cfg.theta.family = marginal;
  cfg.theta.beta = Eigen::Vector4d(1.5, 0.5, 0.5, 1.0);
  cfg.theta.variance = 1.0;
  cfg.theta.shape_or_sd = marginal == MarginalFamily::GammaLog ? 3.0 : 1.0;
  cfg.copula = copula;
  cfg.phi.xi = 0.25;
  cfg.phi.lambda_bar = is_skew(copula) ? 1.0 : 0.0;
  if (has_nu(copula)) cfg.phi.nu = 3.0;
  return cfg;
}

void validate(const ScenarioConfig& cfg) {
  if (cfg.m < 2) throw ConfigError("m", "need at least 2 subjects, got " + std::to_string(cfg.m));
  if (cfg.n_per_subject < 1) throw ConfigError("n_per_subject", "must be positive");
  if (cfg.replications < 1) throw ConfigError("replications", "must be positive");
  if (cfg.theta.beta.size() != 4) throw ConfigError("beta", "need 4 fixed effects (intercept, x1, x2, time)");
  try {
    validate(cfg.theta);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("marginal", e.what());
  }
  if (!(cfg.phi.xi >= 0.0) || !std::isfinite(cfg.phi.xi)) throw ConfigError("xi", "must be finite and >= 0");
  if (!std::isfinite(cfg.phi.lambda_bar)) throw ConfigError("lambda_bar", "must be finite");
  if (has_nu(cfg.copula) && (!cfg.phi.nu || !(*cfg.phi.nu > 0.0))) throw ConfigError("nu", "must be positive");
}

std::mt19937_64 replication_rng(std::uint64_t seed, int rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(rep)};
  return std::mt19937_64(seq);
}

LongitudinalDataset generate_dataset(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  const int n = cfg.n_per_subject;
  Eigen::VectorXd times(n);
  for (int j = 0; j < n; ++j) times[j] = (j + 1) - 0.5 * (n + 1);
  const Eigen::MatrixXd sigma = ar1_correlation(cfg.phi.xi, times);
  const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(n, is_skew(cfg.copula) ? cfg.phi.lambda_bar : 0.0);
  const std::optional<double> nu = has_nu(cfg.copula) ? cfg.phi.nu : std::nullopt;

  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  LongitudinalDataset data;
  data.covariate_names = {"x1", "x2"};
  data.subjects.resize(cfg.m);
  for (int i = 0; i < cfg.m; ++i) {
    Subject& s = data.subjects[i];
    s.id = std::to_string(i + 1);
    s.times = times;
    const double x1 = (i + 1) <= cfg.m / 2 ? 1.0 : 2.0;
    const double x2 = coin(rng) ? 1.0 : 0.0;
    s.covariates.resize(n, 2);
    s.covariates.col(0).setConstant(x1);
    s.covariates.col(1).setConstant(x2);
    const double b = std::sqrt(cfg.theta.variance) * normal(rng);
    const Eigen::MatrixXd u = copula_sample(1, cfg.copula, sigma, lambda, nu, rng);
    const Eigen::VectorXd eta = design_matrix(s) * cfg.theta.beta;
    s.responses.resize(n);
    for (int j = 0; j < n; ++j) {
      const double y = marginal_quantile(u(0, j), eta[j] + b, cfg.theta);
      if (!std::isfinite(y) || (cfg.theta.family == MarginalFamily::GammaLog && !(y > 0.0))) {
        throw std::runtime_error("marginal inversion failed for subject " + s.id + ", time index " +
                                 std::to_string(j));
      }
      s.responses[j] = y;
    }
  }
  return data;
}

Eigen::VectorXd true_vector(const ScenarioConfig& cfg) {
  return natural_vector({cfg.theta, cfg.phi}, cfg.copula);
}

std::vector<std::string> scenario_parameter_names(const ScenarioConfig& cfg) {
  LongitudinalDataset shape;
  shape.covariate_names = {"x1", "x2"};
  return parameter_names(shape, cfg.theta.family, cfg.copula);
}

std::vector<ParamSummary> summarize(const std::vector<std::string>& names, const Eigen::VectorXd& truth,
                                    const std::vector<ReplicationRecord>& records) {
  std::vector<const ReplicationRecord*> ok;
  for (const auto& r : records) {
    if (!r.failed) ok.push_back(&r);
  }
  const double n = static_cast<double>(ok.size());
  std::vector<ParamSummary> rows;
  for (std::size_t k = 0; k < names.size(); ++k) {
    ParamSummary p;
    p.name = names[k];
    p.true_value = truth[k];
    if (ok.empty()) {
      p.mean = p.bias = p.sd = p.se = p.rmse = std::numeric_limits<double>::quiet_NaN();
      rows.push_back(p);
      continue;
    }
    double sum = 0.0, se_sum = 0.0, sq = 0.0;
    for (const auto* r : ok) {
      sum += r->estimates[k];
      se_sum += r->std_errors[k];
      sq += (r->estimates[k] - truth[k]) * (r->estimates[k] - truth[k]);
    }
    p.mean = sum / n;
    p.bias = p.mean - truth[k];
    double dev = 0.0;
    for (const auto* r : ok) dev += (r->estimates[k] - p.mean) * (r->estimates[k] - p.mean);
    p.sd = ok.size() > 1 ? std::sqrt(dev / (n - 1.0)) : 0.0;
    p.se = se_sum / n;
    p.rmse = std::sqrt(sq / n);
    rows.push_back(p);
  }
  return rows;
}

McSummary run_monte_carlo(const ScenarioConfig& cfg, const McOptions& options) {
  validate(cfg);
  const int n_rep = cfg.replications;
  std::vector<ReplicationRecord> records(n_rep);

  FitOptions fit;
  fit.marginal = cfg.theta.family;
  fit.copula = cfg.copula;
  fit.nu = has_nu(cfg.copula) ? cfg.phi.nu : std::nullopt;
  fit.quad_points = options.quad_points;
  fit.quad_mode = options.quad_mode;
  fit.optim = options.optim;

  auto run_one = [&](int rep) {
    ReplicationRecord& rec = records[rep];
    rec.index = rep;
    try {
      auto rng = replication_rng(cfg.seed, rep);
      const LongitudinalDataset data = generate_dataset(cfg, rng);
      const FitResult r = fit_model(data, fit);
      rec.estimates = r.estimates;
      rec.std_errors = r.std_errors;
      rec.mean_score = r.mean_score;
      rec.convergence = r.convergence;
      if (r.convergence == ConvergenceStatus::LineSearchFailure || !r.std_errors.allFinite()) {
        rec.failed = true;
        rec.error = r.convergence == ConvergenceStatus::LineSearchFailure ? "line search failure"
                                                                          : "standard errors unavailable";
      }
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  };

  const int threads = std::clamp(options.threads, 1, std::max(1, n_rep));
  if (threads == 1) {
    for (int rep = 0; rep < n_rep; ++rep) run_one(rep);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int rep = next++; rep < n_rep; rep = next++) run_one(rep);
      });
    }
    for (auto& th : pool) th.join();
  }

  McSummary out;
  out.scenario = cfg.name;
  out.replications = n_rep;
  out.failures = static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed; }));
  if (out.failures * 5 > n_rep) {
    throw std::runtime_error(std::to_string(out.failures) + " of " + std::to_string(n_rep) +
                             " replications failed (limit 20%)");
  }
  out.rows = summarize(scenario_parameter_names(cfg), true_vector(cfg), records);
  out.records = std::move(records);
  return out;
}

std::string summary_csv(const McSummary& summary) {
  std::ostringstream os;
  os << "parameter,true,mean,bias,sd,se,rmse\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : summary.rows) {
    os << r.name << ',' << num(r.true_value) << ',' << num(r.mean) << ',' << num(r.bias) << ',' << num(r.sd) << ','
       << num(r.se) << ',' << num(r.rmse) << '\n';
  }
  return os.str();
}

}  // namespace copglmm
