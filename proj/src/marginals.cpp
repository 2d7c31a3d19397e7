#include "copglmm/marginals.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

#include "copglmm/distributions.hpp"

namespace copglmm {

std::string to_string(MarginalFamily f) { return f == MarginalFamily::GammaLog ? "gamma" : "normal"; }

MarginalFamily parse_marginal_family(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "gamma") return MarginalFamily::GammaLog;
  if (s == "normal" || s == "gaussian") return MarginalFamily::NormalIdentity;
  throw std::invalid_argument("unknown marginal family: " + name);
}

std::string dispersion_name(MarginalFamily f) { return f == MarginalFamily::GammaLog ? "kappa" : "sigma"; }

double linear_predictor(const Eigen::VectorXd& x_row, const Eigen::VectorXd& beta, double b) {
  if (x_row.size() != beta.size()) throw std::invalid_argument("design row and beta differ in length");
  return x_row.dot(beta) + b;
}

namespace {

void require_positive_y(double y) {
  if (!(y > 0.0)) throw std::domain_error("Gamma response must be positive");
}

}  // namespace

double marginal_logpdf(double y, double eta_linear, const MarginalParams& p) {
  const double k = p.shape_or_sd;
  if (p.family == MarginalFamily::NormalIdentity) return norm_logpdf((y - eta_linear) / k) - std::log(k);
  require_positive_y(y);
  // shape kappa, rate kappa / mean, mean = exp(eta_linear)
  return -std::lgamma(k) + k * (std::log(k) - eta_linear) + (k - 1.0) * std::log(y) - y * k * std::exp(-eta_linear);
}

double marginal_cdf(double y, double eta_linear, const MarginalParams& p) {
  const double k = p.shape_or_sd;
  if (p.family == MarginalFamily::NormalIdentity) return norm_cdf((y - eta_linear) / k);
  require_positive_y(y);
  return boost::math::gamma_p(k, y * k * std::exp(-eta_linear));
}

double marginal_quantile(double u, double eta_linear, const MarginalParams& p) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("marginal_quantile: probability must lie in (0,1)");
  const double k = p.shape_or_sd;
  if (p.family == MarginalFamily::NormalIdentity) return eta_linear + k * norm_quantile(u);
  return boost::math::gamma_p_inv(k, u) * std::exp(eta_linear) / k;
}

void validate(const MarginalParams& p) {
  if (!(p.variance > 0.0) || !std::isfinite(p.variance)) throw std::invalid_argument("V[b] must be positive");
  if (!(p.shape_or_sd > 0.0) || !std::isfinite(p.shape_or_sd)) {
    throw std::invalid_argument(dispersion_name(p.family) + " must be positive");
  }
  if (!p.beta.allFinite()) throw std::invalid_argument("beta must be finite");
}

}  // namespace copglmm
