#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "copglmm/copulas.hpp"
#include "copglmm/dataset.hpp"
#include "copglmm/likelihood.hpp"
#include "copglmm/marginals.hpp"
#include "copglmm/optimize.hpp"

namespace copglmm {

/// Box for the stage-2 search.
struct Stage2Bounds {
  double xi_lower = 1e-4, xi_upper = 20.0;
  double lambda_lower = -10.0, lambda_upper = 10.0;
};

struct Stage1Result {
  MarginalParams theta;
  double loglik = 0.0;
  ConvergenceStatus convergence = ConvergenceStatus::MaxIter;
  int iterations = 0;
};

struct Stage2Result {
  CopulaParams phi;
  double loglik = 0.0;
  ConvergenceStatus convergence = ConvergenceStatus::MaxIter;
  int iterations = 0;
};

/// Moment starting values: least squares on y (Normal) or log y (Gamma),
/// residual variance split into between- and within-subject parts.
MarginalParams stage1_start(const LongitudinalDataset& data, MarginalFamily family);

/// Maximises stage1_loglik over (beta, log V, log kappa|sigma).
Stage1Result fit_stage1(const LongitudinalDataset& data, MarginalFamily family, const QuadratureRule& rule,
                        const std::optional<MarginalParams>& init = std::nullopt, const OptimOptions& options = {});

/// xi from rank correlations of probability-integral residuals at the
/// posterior modes of b, mapped to Pearson scale and fitted to exp(-xi lag).
double xi_start(const LongitudinalDataset& data, const MarginalParams& theta_hat);

/// Maximises stage2_loglik over (xi, lambda_bar); nu is held fixed.
Stage2Result fit_stage2(const LongitudinalDataset& data, CopulaFamily family, const MarginalParams& theta_hat,
                        const QuadratureRule& rule, std::optional<double> nu = std::nullopt,
                        const std::optional<CopulaParams>& init = std::nullopt, const Stage2Bounds& bounds = {},
                        const OptimOptions& options = {});

struct NuGridResult {
  Stage2Result best;
  int nu = 0;
  std::vector<std::pair<int, double>> table;  // (nu, stage-2 loglik); failed nu omitted
  std::vector<std::string> warnings;
};

NuGridResult nu_grid_search(const LongitudinalDataset& data, CopulaFamily family, const MarginalParams& theta_hat,
                            const QuadratureRule& rule, const std::vector<int>& grid, const Stage2Bounds& bounds = {},
                            const OptimOptions& options = {});

/// Raised when M or D cannot be inverted; names the block.
class RankDeficiencyError : public std::runtime_error {
 public:
  explicit RankDeficiencyError(const std::string& block)
      : std::runtime_error("rank-deficient Godambe block: " + block), block_(block) {}
  const std::string& block() const { return block_; }

 private:
  std::string block_;
};

/// Observed Godambe matrices in the working parameterisation
/// [beta, log V, log kappa|sigma, xi, (lambda_bar)].
struct GodambeMatrices {
  Eigen::MatrixXd m_psi;
  Eigen::MatrixXd d_psi;
  Eigen::MatrixXd j_psi;
  /// (1/m) sum_i Psi_i, working units.
  Eigen::VectorXd mean_score;
  /// Working-scale standard errors sqrt([J^-1]_jj / m).
  Eigen::VectorXd working_std_errors;
  /// Natural-scale standard errors (delta method for the log-scale entries).
  Eigen::VectorXd std_errors;
};

/// Stacked working vector and its inverse.
Eigen::VectorXd working_vector(const ModelParams& params, CopulaFamily family);
std::vector<std::string> parameter_names(const LongitudinalDataset& data, MarginalFamily marginal, CopulaFamily copula);
Eigen::VectorXd natural_vector(const ModelParams& params, CopulaFamily family);

/// Per-subject scores (m x k) in working units, by central differences.
Eigen::MatrixXd subject_scores(const ModelParams& params, CopulaFamily family, const LongitudinalDataset& data,
                               const QuadratureRule& rule);

GodambeMatrices godambe(const ModelParams& params, CopulaFamily family, const LongitudinalDataset& data,
                        const QuadratureRule& rule);

/// argmax_b of the subject's stage-1 log posterior (Newton, tolerance well below 1e-8).
double posterior_mode_b(int subject_index, const MarginalParams& theta, const LongitudinalDataset& data);

struct FitOptions {
  MarginalFamily marginal = MarginalFamily::GammaLog;
  CopulaFamily copula = CopulaFamily::Gaussian;
  std::optional<double> nu;
  /// Used instead of nu for t families when nonempty.
  std::vector<int> nu_grid;
  int quad_points = 15;
  QuadratureMode quad_mode = QuadratureMode::Adaptive;
  OptimOptions optim;
  Stage2Bounds bounds;
  bool standard_errors = true;
};

struct FitResult {
  ModelParams params;
  MarginalFamily marginal = MarginalFamily::GammaLog;
  CopulaFamily copula = CopulaFamily::Gaussian;
  std::vector<std::string> names;
  /// Natural-scale estimates and SEs aligned with names; SEs are NaN when not computed.
  Eigen::VectorXd estimates;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd mean_score;
  double stage1_loglik = 0.0;
  /// Full-model log-likelihood at the two-stage estimates.
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  std::optional<int> nu_selected;
  std::vector<std::pair<int, double>> nu_table;
  ConvergenceStatus convergence = ConvergenceStatus::MaxIter;
  ConvergenceStatus stage1_convergence = ConvergenceStatus::MaxIter;
  ConvergenceStatus stage2_convergence = ConvergenceStatus::MaxIter;
  int n_subjects = 0;
  int quad_points = 15;
  std::vector<std::string> warnings;
};

/// fit_stage1 -> fit_stage2 or nu_grid_search -> godambe -> AIC/BIC.
/// A supplied stage-1 result (same data and marginal family) is reused.
FitResult fit_model(const LongitudinalDataset& data, const FitOptions& options,
                    const std::optional<Stage1Result>& stage1 = std::nullopt);

}  // namespace copglmm
