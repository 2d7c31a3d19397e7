#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copglmm/distributions.hpp"

namespace copglmm {

enum class CopulaFamily { Gaussian, StudentT, SkewNormal, SkewT };

struct CopulaParams {
  double xi = 0.0;
  double lambda_bar = 0.0;
  std::optional<double> nu;
};

inline constexpr double kUniformClamp = 1e-10;

bool is_skew(CopulaFamily f);
bool has_nu(CopulaFamily f);
std::string to_string(CopulaFamily f);
/// Accepts gaussian, t, skewnormal, skewt (case-insensitive).
CopulaFamily parse_copula_family(const std::string& name);

/// exp(-xi |t_j - t_k|).
Eigen::MatrixXd ar1_correlation(double xi, const Eigen::VectorXd& times);

/// Univariate quantile map for one coordinate of a copula, built once per
/// (family, lambda*, nu). Table lookup in normal-score space followed by a
/// single Newton step on the exact CDF.
class QuantileMap {
 public:
  QuantileMap(CopulaFamily family, double lambda, std::optional<double> nu);

  double operator()(double u) const;
  double logpdf(double z) const;
  double cdf(double z) const;
  double lambda() const { return lambda_; }

 private:
  CopulaFamily family_;
  double lambda_;
  double nu_;
  std::vector<double> s_;   // normal scores of the grid CDF values
  std::vector<double> x_;   // grid abscissae
  std::vector<double> dx_;  // dx/ds at the nodes

  double sf(double z) const;
  double exact_quantile(double u) const;
};

/// Copula log-density evaluator for a fixed correlation matrix, skewness
/// vector and nu.
class CopulaKernel {
 public:
  CopulaKernel(CopulaFamily family, const Eigen::MatrixXd& sigma, const Eigen::VectorXd& lambda,
               std::optional<double> nu);

  int dim() const { return static_cast<int>(sigma_.rows()); }
  CopulaFamily family() const { return family_; }
  const Eigen::VectorXd& marginal_lambda() const { return lambda_star_; }

  /// Quantile of coordinate j (u is clamped first).
  double score(int j, double u) const;
  double logdensity(const Eigen::VectorXd& u) const;
  /// log c given the scores z_j = F_j^{-1}(u_j).
  double logdensity_scores(const Eigen::VectorXd& z) const;

 private:
  CopulaFamily family_;
  Eigen::MatrixXd sigma_;
  Eigen::VectorXd lambda_;
  std::optional<double> nu_;
  SymmetricRoot root_;
  Eigen::VectorXd lambda_star_;
  Eigen::VectorXd skew_dir_;  // Sigma^{-1/2} lambda
  std::vector<QuantileMap> maps_;
  std::vector<int> map_of_;  // coordinate -> index into maps_
  double mv_const_ = 0.0;
};

double copula_logdensity(const Eigen::VectorXd& u, CopulaFamily family, const CopulaParams& params,
                         const Eigen::VectorXd& times);

/// General form: arbitrary correlation matrix and skewness vector.
double copula_logdensity(const Eigen::VectorXd& u, CopulaFamily family, const Eigen::MatrixXd& sigma,
                         const Eigen::VectorXd& lambda, std::optional<double> nu);

/// n x d matrix of copula draws.
Eigen::MatrixXd copula_sample(int n, CopulaFamily family, const CopulaParams& params,
                              const Eigen::VectorXd& times, std::mt19937_64& rng);

Eigen::MatrixXd copula_sample(int n, CopulaFamily family, const Eigen::MatrixXd& sigma,
                              const Eigen::VectorXd& lambda, std::optional<double> nu,
                              std::mt19937_64& rng);

}  // namespace copglmm
