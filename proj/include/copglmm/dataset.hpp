#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace copglmm {

struct Subject {
  std::string id;
  Eigen::VectorXd times;
  Eigen::VectorXd responses;
  /// n_i x q covariate rows, excluding the intercept and time columns.
  Eigen::MatrixXd covariates;

  int size() const { return static_cast<int>(responses.size()); }
};

struct LongitudinalDataset {
  std::vector<Subject> subjects;
  std::vector<std::string> covariate_names;

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_observations() const;
  int n_covariates() const { return static_cast<int>(covariate_names.size()); }
};

/// Fixed-effect design rows [1 | covariates | time].
Eigen::MatrixXd design_matrix(const Subject& s);
int n_fixed_effects(const LongitudinalDataset& data);
/// beta0, beta1, ... in design-column order.
std::vector<std::string> fixed_effect_names(const LongitudinalDataset& data);

/// Throws std::invalid_argument on empty data, misaligned subjects,
/// non-finite values, or times that are not strictly increasing.
void validate(const LongitudinalDataset& data);

}  // namespace copglmm
