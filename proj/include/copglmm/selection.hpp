#pragma once

#include <optional>
#include <string>
#include <vector>

#include "copglmm/copulas.hpp"
#include "copglmm/marginals.hpp"

namespace copglmm {

struct FitResult;

/// -2 l + 2 k
double aic(double loglik, int k);
/// -2 l + log(m) k, m = number of subjects
double bic(double loglik, int k, int m);

struct ModelDescription {
  int n_fixed_effects = 1;
  MarginalFamily marginal = MarginalFamily::GammaLog;
  CopulaFamily copula = CopulaFamily::Gaussian;
};

/// p + V + (kappa|sigma) + xi + [lambda_bar for skew families]; a fixed nu is not counted.
int count_parameters(const ModelDescription& model);

struct ComparisonRow {
  std::string label;
  MarginalFamily marginal = MarginalFamily::GammaLog;
  CopulaFamily copula = CopulaFamily::Gaussian;
  std::optional<int> nu;
  double loglik = 0.0;
  int param_count = 0;
  double aic = 0.0;
  double bic = 0.0;
  int n_subjects = 0;
};

struct ModelComparison {
  /// Sorted by AIC, then parameter count, then label.
  std::vector<ComparisonRow> rows;
  int best_aic_index = 0;
  int best_bic_index = 0;
};

/// "<marginal>/<copula>" with "(nu=N)" appended for t families.
std::string model_label(MarginalFamily marginal, CopulaFamily copula, std::optional<int> nu);

ComparisonRow comparison_row(const FitResult& fit);

/// Throws std::invalid_argument on an empty list or mismatched subject counts.
ModelComparison compare(std::vector<ComparisonRow> rows);
ModelComparison compare(const std::vector<FitResult>& fits);

}  // namespace copglmm
