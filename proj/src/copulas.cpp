#include "copglmm/copulas.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace copglmm {

namespace {

constexpr double kLog2 = std::numbers::ln2;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr int kTableSize = 1200;
constexpr double kTableTail = 5e-11;

double clamp_unit(double u) { return std::clamp(u, kUniformClamp, 1.0 - kUniformClamp); }

double t_log_norm_const(double nu, double d) {
  return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * std::numbers::pi);
}

std::optional<double> checked_nu(CopulaFamily family, std::optional<double> nu) {
  if (!has_nu(family)) return std::nullopt;
  if (!nu || !(*nu > 0.0)) throw std::invalid_argument(to_string(family) + " copula requires nu > 0");
  return nu;
}

}  // namespace

bool is_skew(CopulaFamily f) { return f == CopulaFamily::SkewNormal || f == CopulaFamily::SkewT; }

bool has_nu(CopulaFamily f) { return f == CopulaFamily::StudentT || f == CopulaFamily::SkewT; }

std::string to_string(CopulaFamily f) {
  switch (f) {
    case CopulaFamily::Gaussian: return "gaussian";
    case CopulaFamily::StudentT: return "t";
    case CopulaFamily::SkewNormal: return "skewnormal";
    case CopulaFamily::SkewT: return "skewt";
  }
  return "unknown";
}

CopulaFamily parse_copula_family(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (c != '-' && c != '_') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (s == "gaussian" || s == "normal") return CopulaFamily::Gaussian;
  if (s == "t" || s == "studentt") return CopulaFamily::StudentT;
  if (s == "skewnormal" || s == "sn") return CopulaFamily::SkewNormal;
  if (s == "skewt" || s == "st") return CopulaFamily::SkewT;
  throw std::invalid_argument("unknown copula family: " + name);
}

Eigen::MatrixXd ar1_correlation(double xi, const Eigen::VectorXd& times) {
  if (!(xi >= 0.0) || !std::isfinite(xi)) throw std::invalid_argument("xi must be finite and >= 0");
  const Eigen::Index d = times.size();
  Eigen::MatrixXd r(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    r(j, j) = 1.0;
    for (Eigen::Index k = 0; k < j; ++k) {
      r(j, k) = r(k, j) = std::exp(-xi * std::abs(times[j] - times[k]));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// QuantileMap

QuantileMap::QuantileMap(CopulaFamily family, double lambda, std::optional<double> nu)
    : family_(family), lambda_(lambda), nu_(nu ? *nu : 0.0) {
  if (family_ == CopulaFamily::Gaussian || (family_ == CopulaFamily::SkewNormal && lambda_ == 0.0)) {
    return;  // exact normal quantile, no table
  }
  const double x_lo = exact_quantile(kTableTail);
  const double x_hi = exact_quantile(1.0 - kTableTail);
  const double w_lo = std::asinh(x_lo), w_hi = std::asinh(x_hi);
  s_.resize(kTableSize);
  x_.resize(kTableSize);
  dx_.resize(kTableSize);
  for (int k = 0; k < kTableSize; ++k) {
    const double x = std::sinh(w_lo + (w_hi - w_lo) * k / (kTableSize - 1));
    const double f = cdf(x);
    const double s = f <= 0.5 ? norm_quantile(f) : -norm_quantile(sf(x));
    x_[k] = x;
    s_[k] = s;
    dx_[k] = std::exp(norm_logpdf(s) - logpdf(x));
  }
}

double QuantileMap::cdf(double z) const {
  if (!nu_) return lambda_ == 0.0 ? norm_cdf(z) : detail::sn_cdf_std(z, lambda_);
  return detail::st_cdf_std(z, lambda_, nu_);
}

double QuantileMap::sf(double z) const {
  if (!nu_) return lambda_ == 0.0 ? norm_cdf(-z) : detail::sn_sf_std(z, lambda_);
  return detail::st_sf_std(z, lambda_, nu_);
}

double QuantileMap::logpdf(double z) const {
  if (!nu_) return lambda_ == 0.0 ? norm_logpdf(z) : detail::sn_logpdf_std(z, lambda_);
  return detail::st_logpdf_std(z, lambda_, nu_);
}

double QuantileMap::exact_quantile(double u) const {
  if (!nu_) return lambda_ == 0.0 ? norm_quantile(u) : detail::sn_quantile_std(u, lambda_);
  return detail::st_quantile_std(u, lambda_, nu_);
}

double QuantileMap::operator()(double u) const {
  if (s_.empty()) return exact_quantile(u);
  const double s = norm_quantile(u);
  if (!(s >= s_.front() && s <= s_.back())) return exact_quantile(u);
  const auto it = std::upper_bound(s_.begin(), s_.end(), s);
  const std::size_t k = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - s_.begin(), 1), s_.size() - 1);
  const double h = s_[k] - s_[k - 1];
  const double t = (s - s_[k - 1]) / h;
  const double t2 = t * t, t3 = t2 * t;
  double x = (2 * t3 - 3 * t2 + 1) * x_[k - 1] + (t3 - 2 * t2 + t) * h * dx_[k - 1] +
             (-2 * t3 + 3 * t2) * x_[k] + (t3 - t2) * h * dx_[k];
  // One Newton step on whichever tail holds u.
  const double dens = std::exp(logpdf(x));
  if (u <= 0.5) {
    x -= (cdf(x) - u) / dens;
  } else {
    x += (sf(x) - (1.0 - u)) / dens;
  }
  return x;
}

// ---------------------------------------------------------------------------
// CopulaKernel

CopulaKernel::CopulaKernel(CopulaFamily family, const Eigen::MatrixXd& sigma, const Eigen::VectorXd& lambda,
                           std::optional<double> nu)
    : family_(family), sigma_(sigma), lambda_(lambda), nu_(checked_nu(family, nu)), root_(sigma) {
  const Eigen::Index d = sigma_.rows();
  if (!is_skew(family_)) lambda_ = Eigen::VectorXd::Zero(d);
  if (lambda_.size() != d) throw std::invalid_argument("lambda length must match sigma");
  if (!lambda_.allFinite()) throw std::invalid_argument("lambda must be finite");

  lambda_star_ = Eigen::VectorXd::Zero(d);
  skew_dir_ = Eigen::VectorXd::Zero(d);
  if (is_skew(family_)) {
    lambda_star_ = skewness_from_delta(marginal_delta(root_, lambda_));
    skew_dir_ = root_.inv_root * lambda_;
  }

  map_of_.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    auto it = std::find_if(maps_.begin(), maps_.end(),
                           [&](const QuantileMap& m) { return m.lambda() == lambda_star_[j]; });
    if (it == maps_.end()) {
      maps_.emplace_back(family_, lambda_star_[j], nu_);
      it = maps_.end() - 1;
    }
    map_of_[j] = static_cast<int>(it - maps_.begin());
  }

  const double dd = static_cast<double>(d);
  switch (family_) {
    case CopulaFamily::Gaussian: mv_const_ = -0.5 * root_.log_det; break;
    case CopulaFamily::StudentT:
      mv_const_ = t_log_norm_const(*nu_, dd) - 0.5 * root_.log_det - dd * t_log_norm_const(*nu_, 1.0);
      break;
    case CopulaFamily::SkewNormal: mv_const_ = kLog2 - dd * kLogSqrt2Pi - 0.5 * root_.log_det; break;
    case CopulaFamily::SkewT: mv_const_ = kLog2 + t_log_norm_const(*nu_, dd) - 0.5 * root_.log_det; break;
  }
}

double CopulaKernel::score(int j, double u) const { return maps_[map_of_[j]](clamp_unit(u)); }

double CopulaKernel::logdensity_scores(const Eigen::VectorXd& z) const {
  const Eigen::Index d = z.size();
  if (d != sigma_.rows()) throw std::invalid_argument("score vector has wrong length");
  if (d == 1) return 0.0;
  const double q = z.dot(root_.inverse * z);
  switch (family_) {
    case CopulaFamily::Gaussian: return mv_const_ - 0.5 * (q - z.squaredNorm());
    case CopulaFamily::StudentT: {
      const double nu = *nu_;
      double out = mv_const_ - 0.5 * (nu + d) * std::log1p(q / nu);
      for (Eigen::Index j = 0; j < d; ++j) out += 0.5 * (nu + 1.0) * std::log1p(z[j] * z[j] / nu);
      return out;
    }
    case CopulaFamily::SkewNormal: {
      double out = mv_const_ - 0.5 * q + norm_logcdf(skew_dir_.dot(z));
      for (Eigen::Index j = 0; j < d; ++j) out -= maps_[map_of_[j]].logpdf(z[j]);
      return out;
    }
    case CopulaFamily::SkewT: {
      const double nu = *nu_;
      const double a = skew_dir_.dot(z) * std::sqrt((nu + d) / (q + nu));
      double out = mv_const_ - 0.5 * (nu + d) * std::log1p(q / nu) + detail::t_logcdf_fast(a, nu + d);
      for (Eigen::Index j = 0; j < d; ++j) out -= maps_[map_of_[j]].logpdf(z[j]);
      return out;
    }
  }
  return 0.0;
}

double CopulaKernel::logdensity(const Eigen::VectorXd& u) const {
  const Eigen::Index d = u.size();
  if (d != sigma_.rows()) throw std::invalid_argument("u has wrong length");
  if (d == 1) return 0.0;
  Eigen::VectorXd z(d);
  for (Eigen::Index j = 0; j < d; ++j) z[j] = score(static_cast<int>(j), u[j]);
  return logdensity_scores(z);
}

// ---------------------------------------------------------------------------
// Free functions

namespace {

Eigen::VectorXd lambda_vector(CopulaFamily family, const CopulaParams& params, Eigen::Index d) {
  return Eigen::VectorXd::Constant(d, is_skew(family) ? params.lambda_bar : 0.0);
}

}  // namespace

double copula_logdensity(const Eigen::VectorXd& u, CopulaFamily family, const CopulaParams& params,
                         const Eigen::VectorXd& times) {
  if (u.size() != times.size()) throw std::invalid_argument("u and times differ in length");
  return copula_logdensity(u, family, ar1_correlation(params.xi, times), lambda_vector(family, params, u.size()),
                           params.nu);
}

double copula_logdensity(const Eigen::VectorXd& u, CopulaFamily family, const Eigen::MatrixXd& sigma,
                         const Eigen::VectorXd& lambda, std::optional<double> nu) {
  if (u.size() == 1) return 0.0;
  return CopulaKernel(family, sigma, lambda, nu).logdensity(u);
}

Eigen::MatrixXd copula_sample(int n, CopulaFamily family, const CopulaParams& params, const Eigen::VectorXd& times,
                              std::mt19937_64& rng) {
  return copula_sample(n, family, ar1_correlation(params.xi, times), lambda_vector(family, params, times.size()),
                       params.nu, rng);
}

Eigen::MatrixXd copula_sample(int n, CopulaFamily family, const Eigen::MatrixXd& sigma, const Eigen::VectorXd& lambda,
                              std::optional<double> nu, std::mt19937_64& rng) {
  if (n < 0) throw std::invalid_argument("sample size must be nonnegative");
  nu = checked_nu(family, nu);
  const Eigen::Index d = sigma.rows();
  const SymmetricRoot root(sigma);
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd lambda_star = Eigen::VectorXd::Zero(d);
  if (is_skew(family)) {
    if (lambda.size() != d) throw std::invalid_argument("lambda length must match sigma");
    delta = marginal_delta(root, lambda);
    lambda_star = skewness_from_delta(delta);
  }
  const Eigen::MatrixXd cov = sigma - delta * delta.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw DecompositionError("sampling covariance is not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  std::normal_distribution<double> normal(0.0, 1.0);
  std::optional<std::chi_squared_distribution<double>> chi2;
  if (nu) chi2.emplace(*nu);

  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd w(d);
  for (int i = 0; i < n; ++i) {
    const double w0 = is_skew(family) ? std::abs(normal(rng)) : 0.0;
    for (Eigen::Index j = 0; j < d; ++j) w[j] = normal(rng);
    Eigen::VectorXd z = chol * w + delta * w0;
    if (nu) z /= std::sqrt((*chi2)(rng) / *nu);
    for (Eigen::Index j = 0; j < d; ++j) {
      double u = 0.5;
      switch (family) {
        case CopulaFamily::Gaussian: u = norm_cdf(z[j]); break;
        case CopulaFamily::StudentT: u = detail::st_cdf_std(z[j], 0.0, *nu); break;
        case CopulaFamily::SkewNormal: u = detail::sn_cdf_std(z[j], lambda_star[j]); break;
        case CopulaFamily::SkewT: u = detail::st_cdf_std(z[j], lambda_star[j], *nu); break;
      }
      out(i, j) = std::clamp(u, 1e-16, 1.0 - 1e-16);
    }
  }
  return out;
}

}  // namespace copglmm
