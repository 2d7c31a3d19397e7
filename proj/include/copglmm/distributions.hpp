#pragma once

#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

namespace copglmm {

/// Raised when a (Sigma, lambda) pair implies a marginal |delta*| >= 1.
class InvalidSkewness : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a correlation/scale matrix is not positive definite.
class DecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SkewNormalParams1 {
  double scale_sq = 1.0;
  double lambda = 0.0;
};

struct SkewTParams1 {
  double scale_sq = 1.0;
  double lambda = 0.0;
  double nu = 1.0;
};

/// Mean-zero multivariate skew-normal (nu empty) or skew-t parameters.
struct MvSkewParams {
  Eigen::MatrixXd sigma;
  Eigen::VectorXd lambda;
  std::optional<double> nu;
};

// Standard normal.
double norm_pdf(double x);
double norm_logpdf(double x);
double norm_cdf(double x);
/// log Phi(x), accurate far into the lower tail.
double norm_logcdf(double x);
double norm_quantile(double u);

// Student-t with nu degrees of freedom (unit scale).
double t_pdf(double x, double nu);
double t_logpdf(double x, double nu);
double t_cdf(double x, double nu);
double t_logcdf(double x, double nu);
double t_quantile(double u, double nu);

// Univariate skew-normal, density 2 phi(z | s2) Phi(lambda z / s).
double sn1_pdf(double z, const SkewNormalParams1& p);
double sn1_logpdf(double z, const SkewNormalParams1& p);
double sn1_cdf(double z, const SkewNormalParams1& p);
double sn1_quantile(double u, const SkewNormalParams1& p);

// Univariate skew-t, density 2 t(z | s2, nu) T(lambda z / s sqrt((nu+1)/(Q+nu)) | nu+1).
double st1_pdf(double z, const SkewTParams1& p);
double st1_logpdf(double z, const SkewTParams1& p);
double st1_cdf(double z, const SkewTParams1& p);
double st1_quantile(double u, const SkewTParams1& p);

/// Multivariate normal / t log densities with correlation matrix sigma.
double mvn_logpdf(const Eigen::VectorXd& z, const Eigen::MatrixXd& sigma);
double mvt_logpdf(const Eigen::VectorXd& z, const Eigen::MatrixXd& sigma, double nu);

double mv_sn_logpdf(const Eigen::VectorXd& z, const MvSkewParams& p);
double mv_st_logpdf(const Eigen::VectorXd& t, const MvSkewParams& p);

/// Per-coordinate skewness lambda*_j of the univariate margins of a
/// multivariate skew-normal/skew-t with parameters (sigma, lambda).
Eigen::VectorXd marginal_skewness(const MvSkewParams& p);

/// Symmetric factorization of a positive definite matrix.
///
/// Holds the symmetric square root and its inverse (both from one
/// eigendecomposition), the inverse, and the log-determinant.
struct SymmetricRoot {
  Eigen::MatrixXd root;
  Eigen::MatrixXd inv_root;
  Eigen::MatrixXd inverse;
  double log_det = 0.0;

  explicit SymmetricRoot(const Eigen::MatrixXd& sigma);
};

/// delta* = Sigma^{1/2} lambda / sqrt(1 + lambda'lambda).
Eigen::VectorXd marginal_delta(const SymmetricRoot& root, const Eigen::VectorXd& lambda);
/// lambda*_j = delta_j / sqrt(1 - delta_j^2); throws InvalidSkewness.
Eigen::VectorXd skewness_from_delta(const Eigen::VectorXd& delta);

namespace detail {

// Standardized (unit scale) kernels shared by the copula code.
double sn_cdf_std(double x, double lambda);
double sn_sf_std(double x, double lambda);
double sn_logpdf_std(double x, double lambda);
double sn_quantile_std(double u, double lambda);

double st_cdf_std(double x, double lambda, double nu);
double st_sf_std(double x, double lambda, double nu);
double st_logpdf_std(double x, double lambda, double nu);
double st_quantile_std(double u, double lambda, double nu);

/// Student-t CDF for integer nu by the finite trigonometric series,
/// evaluating the smaller tail directly.
double t_cdf_int(double x, int nu);

/// P(X < h, Y < k) for a standard bivariate t with integer nu and
/// correlation r (Dunnett-Sobel closed form).
double bvt_lower(int nu, double h, double k, double r);

/// log T(x; nu), through t_cdf_int when nu is an integer.
double t_logcdf_fast(double x, double nu);

/// True when nu is an integer small enough for the closed-form routes.
bool integer_nu(double nu);

}  // namespace detail

}  // namespace copglmm
