#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copglmm/copulas.hpp"
#include "copglmm/dataset.hpp"
#include "copglmm/estimation.hpp"
#include "copglmm/marginals.hpp"

namespace copglmm {

/// Invalid scenario or CLI configuration; field() names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Longitudinal design with x1 = 1 for the first half of the subjects and 2
/// afterwards, x2 ~ Bernoulli(0.5) per subject, t_j = j - (n + 1) / 2, and
/// b_i ~ N(0, V).
struct ScenarioConfig {
  std::string name;
  int m = 200;
  int n_per_subject = 4;
  MarginalParams theta;
  CopulaFamily copula = CopulaFamily::Gaussian;
  CopulaParams phi;
  int replications = 50;
  std::uint64_t seed = 1;
};

/// beta = (1.5, 0.5, 0.5, 1.0), V = 1, kappa = 3 or sigma = 1, xi = 0.25,
/// lambda_bar = 1 for skew copulas, nu = 3 for t copulas.
ScenarioConfig reference_scenario(MarginalFamily marginal, CopulaFamily copula, int m = 200, int replications = 50,
                                  std::uint64_t seed = 1);

/// Throws ConfigError naming the field.
void validate(const ScenarioConfig& cfg);

/// Stream for replication `rep` derived from the base seed.
std::mt19937_64 replication_rng(std::uint64_t seed, int rep);

LongitudinalDataset generate_dataset(const ScenarioConfig& cfg, std::mt19937_64& rng);

struct ParamSummary {
  std::string name;
  double true_value = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  /// Empirical SD with the N - 1 divisor (0 when N = 1).
  double sd = 0.0;
  /// Mean Godambe SE.
  double se = 0.0;
  /// sqrt((1/N) sum (estimate - true)^2).
  double rmse = 0.0;
};

struct ReplicationRecord {
  int index = 0;
  bool failed = false;
  std::string error;
  Eigen::VectorXd estimates;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd mean_score;
  ConvergenceStatus convergence = ConvergenceStatus::MaxIter;
};

struct McSummary {
  std::string scenario;
  std::vector<ParamSummary> rows;
  int replications = 0;
  int failures = 0;
  std::vector<ReplicationRecord> records;
};

struct McOptions {
  int quad_points = 15;
  QuadratureMode quad_mode = QuadratureMode::Adaptive;
  OptimOptions optim;
  /// Worker threads for independent replications; results are reduced in
  /// replication order, so the summary does not depend on this.
  int threads = 1;
};

/// Summaries from the successful records of a finished run.
std::vector<ParamSummary> summarize(const std::vector<std::string>& names, const Eigen::VectorXd& truth,
                                    const std::vector<ReplicationRecord>& records);

/// Generate, fit (nu fixed at its true value) and summarise N replications.
/// Throws std::runtime_error when more than 20% of replications fail.
McSummary run_monte_carlo(const ScenarioConfig& cfg, const McOptions& options = {});

/// True parameter vector in the fit-report order.
Eigen::VectorXd true_vector(const ScenarioConfig& cfg);
std::vector<std::string> scenario_parameter_names(const ScenarioConfig& cfg);

/// parameter,true,mean,bias,sd,se,rmse
std::string summary_csv(const McSummary& summary);

}  // namespace copglmm
