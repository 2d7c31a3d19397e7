#pragma once

#include <string>

#include <Eigen/Dense>

namespace copglmm {

enum class MarginalFamily { GammaLog, NormalIdentity };

struct MarginalParams {
  Eigen::VectorXd beta;
  double variance = 1.0;     // V[b]
  double shape_or_sd = 1.0;  // kappa (Gamma) or sigma (Normal)
  MarginalFamily family = MarginalFamily::GammaLog;
};

std::string to_string(MarginalFamily f);
/// Accepts gamma or normal (case-insensitive).
MarginalFamily parse_marginal_family(const std::string& name);
/// "kappa" or "sigma".
std::string dispersion_name(MarginalFamily f);

double linear_predictor(const Eigen::VectorXd& x_row, const Eigen::VectorXd& beta, double b);

// Conditional response law given the linear predictor (b already included).
double marginal_logpdf(double y, double eta_linear, const MarginalParams& p);
double marginal_cdf(double y, double eta_linear, const MarginalParams& p);
double marginal_quantile(double u, double eta_linear, const MarginalParams& p);

/// Throws std::invalid_argument when V, kappa/sigma or beta are invalid.
void validate(const MarginalParams& p);

}  // namespace copglmm
