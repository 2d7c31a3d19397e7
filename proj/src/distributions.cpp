#include "copglmm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/owens_t.hpp>

namespace copglmm {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLog2 = std::numbers::ln2;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kInf = std::numeric_limits<double>::infinity();

void require_open_unit(double u, const char* what) {
  if (!(u > 0.0 && u < 1.0)) {
    throw std::domain_error(std::string(what) + ": probability must lie in (0,1)");
  }
}

void require_nu(double nu) {
  if (!(nu > 0.0) || std::isnan(nu)) throw std::invalid_argument("degrees of freedom must be positive");
}

double validated_scale(double scale_sq, double lambda) {
  if (!(scale_sq > 0.0) || !std::isfinite(scale_sq)) {
    throw std::invalid_argument("scale_sq must be positive and finite");
  }
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  return std::sqrt(scale_sq);
}

double t_log_norm_const(double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * kPi);
}

using detail::t_logcdf_fast;

// Safeguarded Newton on a monotone CDF. Works on whichever tail holds the
// target so that probabilities near 1 keep full relative precision.
template <class Cdf, class Sf, class LogPdf>
double solve_quantile(double u, double x0, Cdf cdf, Sf sf, LogPdf logpdf) {
  const bool lower = u <= 0.5;
  const double target = lower ? u : 1.0 - u;
  auto resid = [&](double x) { return lower ? cdf(x) - target : target - sf(x); };

  double x = std::isfinite(x0) ? x0 : 0.0;
  double r = resid(x);
  if (r == 0.0) return x;

  double lo, hi;
  double step = 1.0;
  if (r > 0.0) {
    hi = x;
    lo = x - step;
    while (resid(lo) > 0.0) {
      hi = lo;
      step *= 2.0;
      lo -= step;
      if (step > 1e300) throw std::runtime_error("quantile bracket search diverged");
    }
  } else {
    lo = x;
    hi = x + step;
    while (resid(hi) < 0.0) {
      lo = hi;
      step *= 2.0;
      hi += step;
      if (step > 1e300) throw std::runtime_error("quantile bracket search diverged");
    }
  }

  for (int iter = 0; iter < 200; ++iter) {
    const double dens = std::exp(logpdf(x));
    double xn = x - r / dens;
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    const double rn = resid(xn);
    if (rn == 0.0) return xn;
    if (rn > 0.0) {
      hi = xn;
    } else {
      lo = xn;
    }
    const double dx = std::abs(xn - x);
    x = xn;
    r = rn;
    if (dx <= 2e-15 * (1.0 + std::abs(x))) return x;
    if (hi - lo <= 4e-16 * (1.0 + std::abs(x))) return x;
  }
  return x;
}

// Integrates a univariate density over (-inf, x] or [x, inf).
template <class Pdf>
double tail_integral(Pdf pdf, double x, bool lower) {
  using boost::math::quadrature::gauss_kronrod;
  double err = 0.0;
  if (lower) return gauss_kronrod<double, 61>::integrate(pdf, -kInf, x, 20, 1e-13, &err);
  return gauss_kronrod<double, 61>::integrate(pdf, x, kInf, 20, 1e-13, &err);
}

}  // namespace

// ---------------------------------------------------------------------------
// Normal

double norm_pdf(double x) { return std::exp(norm_logpdf(x)); }

double norm_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_logcdf(double x) {
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  if (x > -37.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  // Mills-ratio asymptotics once erfc underflows.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return norm_logpdf(x) - std::log(-x) + std::log(series);
}

double norm_quantile(double u) {
  require_open_unit(u, "norm_quantile");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

// ---------------------------------------------------------------------------
// Student-t

double t_pdf(double x, double nu) { return std::exp(t_logpdf(x, nu)); }

double t_logpdf(double x, double nu) {
  require_nu(nu);
  return t_log_norm_const(nu) - 0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

double t_cdf(double x, double nu) {
  require_nu(nu);
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return boost::math::cdf(boost::math::students_t_distribution<double>(nu), x);
}

double t_logcdf(double x, double nu) {
  require_nu(nu);
  if (std::isinf(x)) return x > 0 ? 0.0 : -kInf;
  const boost::math::students_t_distribution<double> dist(nu);
  if (x <= 0.0) return std::log(boost::math::cdf(dist, x));
  return std::log1p(-boost::math::cdf(dist, -x));
}

double t_quantile(double u, double nu) {
  require_nu(nu);
  require_open_unit(u, "t_quantile");
  return boost::math::quantile(boost::math::students_t_distribution<double>(nu), u);
}

// ---------------------------------------------------------------------------
// Closed forms

namespace detail {

bool integer_nu(double nu) { return nu >= 1.0 && nu <= 200.0 && nu == std::floor(nu); }

double t_logcdf_fast(double x, double nu) {
  if (integer_nu(nu)) {
    const int n = static_cast<int>(nu);
    if (x <= 0.0) return std::log(t_cdf_int(x, n));
    return std::log1p(-t_cdf_int(-x, n));
  }
  return t_logcdf(x, nu);
}

double t_cdf_int(double x, int nu) {
  const double ax = std::abs(x);
  double tail;
  if (nu == 1) {
    tail = std::atan2(1.0, ax) / kPi;
  } else {
    const double denom = nu + ax * ax;
    const double c = nu / denom;  // cos^2(theta)
    const double s = ax / std::sqrt(denom);  // sin(theta)
    if (nu % 2 == 0) {
      const int k_end = nu / 2;
      if (c < 0.3) {
        // Remainder of sum_k a_k c^k = 1/s beyond the finite part.
        double a = 1.0;
        for (int k = 1; k <= k_end; ++k) a *= (2.0 * k - 1.0) / (2.0 * k);
        double ck = std::pow(c, k_end);
        double sum = 0.0;
        for (int k = k_end; k < k_end + 400; ++k) {
          const double term = a * ck;
          sum += term;
          if (term < 1e-18 * sum) break;
          a *= (2.0 * k + 1.0) / (2.0 * k + 2.0);
          ck *= c;
        }
        tail = 0.5 * s * sum;
      } else {
        double a = 1.0, ck = 1.0, sum = 0.0;
        for (int k = 0; k < k_end; ++k) {
          sum += a * ck;
          a *= (2.0 * k + 1.0) / (2.0 * k + 2.0);
          ck *= c;
        }
        tail = 0.5 * (1.0 - s * sum);
      }
    } else {
      const int k_end = (nu - 1) / 2;
      const double cos_t = std::sqrt(c);
      if (c < 0.3) {
        double b = 1.0;
        for (int k = 1; k <= k_end; ++k) b *= (2.0 * k) / (2.0 * k + 1.0);
        double ck = std::pow(c, k_end);
        double sum = 0.0;
        for (int k = k_end; k < k_end + 400; ++k) {
          const double term = b * ck;
          sum += term;
          if (term < 1e-18 * sum) break;
          b *= (2.0 * k + 2.0) / (2.0 * k + 3.0);
          ck *= c;
        }
        tail = s * cos_t * sum / kPi;
      } else {
        const double theta = std::atan2(ax, std::sqrt(static_cast<double>(nu)));
        double b = 1.0, ck = 1.0, sum = 0.0;
        for (int k = 0; k < k_end; ++k) {
          sum += b * ck;
          b *= (2.0 * k + 2.0) / (2.0 * k + 3.0);
          ck *= c;
        }
        tail = 0.5 - (theta + s * cos_t * sum) / kPi;
      }
    }
  }
  tail = std::clamp(tail, 0.0, 0.5);
  return x <= 0.0 ? tail : 1.0 - tail;
}

double bvt_lower(int nu, double dh, double dk, double r) {
  const double tpi = 2.0 * kPi;
  const double snu = std::sqrt(static_cast<double>(nu));
  const double ors = 1.0 - r * r;
  const double hrk = dh - r * dk;
  const double krh = dk - r * dh;
  double xnhk = 0.0, xnkh = 0.0;
  if (std::abs(hrk) + ors > 0.0) {
    xnhk = hrk * hrk / (hrk * hrk + ors * (nu + dk * dk));
    xnkh = krh * krh / (krh * krh + ors * (nu + dh * dh));
  }
  const double hs = hrk < 0.0 ? -1.0 : 1.0;
  const double ks = krh < 0.0 ? -1.0 : 1.0;
  double bvt;
  if (nu % 2 == 0) {
    bvt = std::atan2(std::sqrt(ors), -r) / tpi;
    double gmph = dh / std::sqrt(16.0 * (nu + dh * dh));
    double gmpk = dk / std::sqrt(16.0 * (nu + dk * dk));
    double btnckh = 2.0 * std::atan2(std::sqrt(xnkh), std::sqrt(1.0 - xnkh)) / kPi;
    double btpdkh = 2.0 * std::sqrt(xnkh * (1.0 - xnkh)) / kPi;
    double btnchk = 2.0 * std::atan2(std::sqrt(xnhk), std::sqrt(1.0 - xnhk)) / kPi;
    double btpdhk = 2.0 * std::sqrt(xnhk * (1.0 - xnhk)) / kPi;
    for (int j = 1; j <= nu / 2; ++j) {
      bvt += gmph * (1.0 + ks * btnckh);
      bvt += gmpk * (1.0 + hs * btnchk);
      btnckh += btpdkh;
      btpdkh = 2.0 * j * btpdkh * (1.0 - xnkh) / (2.0 * j + 1.0);
      btnchk += btpdhk;
      btpdhk = 2.0 * j * btpdhk * (1.0 - xnhk) / (2.0 * j + 1.0);
      gmph = gmph * (2.0 * j - 1.0) / (2.0 * j * (1.0 + dh * dh / nu));
      gmpk = gmpk * (2.0 * j - 1.0) / (2.0 * j * (1.0 + dk * dk / nu));
    }
  } else {
    const double qhrk = std::sqrt(dh * dh + dk * dk - 2.0 * r * dh * dk + nu * ors);
    const double hkrn = dh * dk + r * nu;
    const double hkn = dh * dk - nu;
    const double hpk = dh + dk;
    bvt = std::atan2(-snu * (hkn * qhrk + hpk * hkrn), hkn * hkrn - nu * hpk * qhrk) / tpi;
    if (bvt < -1e-15) bvt += 1.0;
    double gmph = dh / (tpi * snu * (1.0 + dh * dh / nu));
    double gmpk = dk / (tpi * snu * (1.0 + dk * dk / nu));
    double btnckh = std::sqrt(xnkh);
    double btpdkh = btnckh;
    double btnchk = std::sqrt(xnhk);
    double btpdhk = btnchk;
    for (int j = 1; j <= (nu - 1) / 2; ++j) {
      bvt += gmph * (1.0 + ks * btnckh);
      bvt += gmpk * (1.0 + hs * btnchk);
      btpdkh = (2.0 * j - 1.0) * btpdkh * (1.0 - xnkh) / (2.0 * j);
      btnckh += btpdkh;
      btpdhk = (2.0 * j - 1.0) * btpdhk * (1.0 - xnhk) / (2.0 * j);
      btnchk += btpdhk;
      gmph = 2.0 * j * gmph / ((2.0 * j + 1.0) * (1.0 + dh * dh / nu));
      gmpk = 2.0 * j * gmpk / ((2.0 * j + 1.0) * (1.0 + dk * dk / nu));
    }
  }
  return bvt;
}

// Skew-normal CDF: Phi(x) - 2 T(x, lambda). Only nonpositive arguments are
// evaluated directly; the upper tail goes through the reflection
// 1 - F(x; lambda) = F(-x; -lambda).
double sn_lower_direct(double x, double lambda) {
  if (lambda == 0.0) return norm_cdf(x);
  const double base = norm_cdf(x);
  const double v = base - 2.0 * boost::math::owens_t(x, lambda);
  if (lambda < 0.0 || v > 1e-3 * base) return std::clamp(v, 0.0, 1.0);
  // Heavy cancellation: use F = (1/pi) int_lambda^inf exp(-x^2 (1+t^2)/2) / (1+t^2) dt.
  using boost::math::quadrature::gauss_kronrod;
  const double h2 = x * x;
  auto g = [h2, lambda](double t) { return std::exp(-0.5 * h2 * (t * t - lambda * lambda)) / (1.0 + t * t); };
  double err = 0.0;
  const double integral = gauss_kronrod<double, 61>::integrate(g, lambda, kInf, 20, 1e-14, &err);
  return std::exp(-0.5 * h2 * (1.0 + lambda * lambda)) * integral / kPi;
}

double sn_cdf_std(double x, double lambda) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  if (x <= 0.0) return sn_lower_direct(x, lambda);
  return 1.0 - sn_lower_direct(-x, -lambda);
}

double sn_sf_std(double x, double lambda) { return sn_cdf_std(-x, -lambda); }

double sn_logpdf_std(double x, double lambda) {
  return kLog2 + norm_logpdf(x) + norm_logcdf(lambda * x);
}

double sn_quantile_std(double u, double lambda) {
  require_open_unit(u, "sn_quantile");
  if (lambda == 0.0) return norm_quantile(u);
  const double delta = lambda / std::sqrt(1.0 + lambda * lambda);
  const double mean = delta * std::sqrt(2.0 / kPi);
  const double sd = std::sqrt(1.0 - 2.0 * delta * delta / kPi);
  const double x0 = mean + sd * norm_quantile(u);
  return solve_quantile(
      u, x0, [lambda](double x) { return sn_cdf_std(x, lambda); },
      [lambda](double x) { return sn_sf_std(x, lambda); },
      [lambda](double x) { return sn_logpdf_std(x, lambda); });
}

double st_logpdf_std(double x, double lambda, double nu) {
  const double base = t_logpdf(x, nu);
  if (lambda == 0.0) return base;
  const double arg = lambda * x * std::sqrt((nu + 1.0) / (x * x + nu));
  return kLog2 + base + t_logcdf_fast(arg, nu + 1.0);
}

namespace {

double st_lower_quadrature(double x, double lambda, double nu) {
  auto pdf = [lambda, nu](double z) { return std::exp(st_logpdf_std(z, lambda, nu)); };
  if (x <= 0.0) return std::clamp(tail_integral(pdf, x, true), 0.0, 1.0);
  return std::clamp(1.0 - tail_integral(pdf, x, false), 0.0, 1.0);
}

// Only called with x <= 0 for the closed form; see sn_lower_direct.
double st_lower_direct(double x, double lambda, double nu) {
  if (lambda == 0.0) {
    return integer_nu(nu) ? t_cdf_int(x, static_cast<int>(nu)) : t_cdf(x, nu);
  }
  if (integer_nu(nu)) {
    const double delta = lambda / std::sqrt(1.0 + lambda * lambda);
    const double v = 2.0 * bvt_lower(static_cast<int>(nu), x, 0.0, -delta);
    return std::clamp(v, 0.0, 1.0);
  }
  return st_lower_quadrature(x, lambda, nu);
}

}  // namespace

double st_cdf_std(double x, double lambda, double nu) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  if (x <= 0.0) return st_lower_direct(x, lambda, nu);
  return 1.0 - st_lower_direct(-x, -lambda, nu);
}

double st_sf_std(double x, double lambda, double nu) { return st_cdf_std(-x, -lambda, nu); }

double st_quantile_std(double u, double lambda, double nu) {
  require_open_unit(u, "st_quantile");
  if (lambda == 0.0) return t_quantile(u, nu);
  const double delta = lambda / std::sqrt(1.0 + lambda * lambda);
  const double x0 = delta * std::sqrt(2.0 / kPi) + t_quantile(u, nu);
  return solve_quantile(
      u, x0, [=](double x) { return st_cdf_std(x, lambda, nu); },
      [=](double x) { return st_sf_std(x, lambda, nu); },
      [=](double x) { return st_logpdf_std(x, lambda, nu); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Univariate skew families

double sn1_logpdf(double z, const SkewNormalParams1& p) {
  const double s = validated_scale(p.scale_sq, p.lambda);
  return detail::sn_logpdf_std(z / s, p.lambda) - std::log(s);
}

double sn1_pdf(double z, const SkewNormalParams1& p) { return std::exp(sn1_logpdf(z, p)); }

double sn1_cdf(double z, const SkewNormalParams1& p) {
  const double s = validated_scale(p.scale_sq, p.lambda);
  return detail::sn_cdf_std(z / s, p.lambda);
}

double sn1_quantile(double u, const SkewNormalParams1& p) {
  const double s = validated_scale(p.scale_sq, p.lambda);
  return s * detail::sn_quantile_std(u, p.lambda);
}

double st1_logpdf(double z, const SkewTParams1& p) {
  const double s = validated_scale(p.scale_sq, p.lambda);
  require_nu(p.nu);
  return detail::st_logpdf_std(z / s, p.lambda, p.nu) - std::log(s);
}

double st1_pdf(double z, const SkewTParams1& p) { return std::exp(st1_logpdf(z, p)); }

double st1_cdf(double z, const SkewTParams1& p) {
  const double s = validated_scale(p.scale_sq, p.lambda);
  require_nu(p.nu);
  return detail::st_cdf_std(z / s, p.lambda, p.nu);
}

double st1_quantile(double u, const SkewTParams1& p) {
  const double s = validated_scale(p.scale_sq, p.lambda);
  require_nu(p.nu);
  return s * detail::st_quantile_std(u, p.lambda, p.nu);
}

// ---------------------------------------------------------------------------
// Multivariate

SymmetricRoot::SymmetricRoot(const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw DecompositionError("matrix must be square and nonempty");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  if (eig.info() != Eigen::Success) throw DecompositionError("eigendecomposition failed");
  const Eigen::VectorXd& ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 1e-14 * std::max(1.0, ev.maxCoeff())) || !ev.allFinite()) {
    throw DecompositionError("matrix is not positive definite");
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  const Eigen::VectorXd sq = ev.array().sqrt();
  root = v * sq.asDiagonal() * v.transpose();
  inv_root = v * sq.cwiseInverse().asDiagonal() * v.transpose();
  inverse = v * ev.cwiseInverse().asDiagonal() * v.transpose();
  log_det = ev.array().log().sum();
}

namespace {

struct Cholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det = 0.0;

  explicit Cholesky(const Eigen::MatrixXd& sigma) : llt(sigma) {
    if (llt.info() != Eigen::Success) throw DecompositionError("matrix is not positive definite");
    log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }
  double quad(const Eigen::VectorXd& z) const {
    return llt.matrixL().solve(z).squaredNorm();
  }
};

void check_dims(const Eigen::VectorXd& z, const MvSkewParams& p) {
  if (p.sigma.rows() != z.size() || p.sigma.cols() != z.size() || p.lambda.size() != z.size()) {
    throw std::invalid_argument("dimension mismatch between point, sigma and lambda");
  }
}

}  // namespace

double mvn_logpdf(const Eigen::VectorXd& z, const Eigen::MatrixXd& sigma) {
  const Cholesky chol(sigma);
  const double d = static_cast<double>(z.size());
  return -d * kLogSqrt2Pi - 0.5 * chol.log_det - 0.5 * chol.quad(z);
}

double mvt_logpdf(const Eigen::VectorXd& z, const Eigen::MatrixXd& sigma, double nu) {
  require_nu(nu);
  const Cholesky chol(sigma);
  const double d = static_cast<double>(z.size());
  return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * kPi) -
         0.5 * chol.log_det - 0.5 * (nu + d) * std::log1p(chol.quad(z) / nu);
}

double mv_sn_logpdf(const Eigen::VectorXd& z, const MvSkewParams& p) {
  check_dims(z, p);
  const SymmetricRoot r(p.sigma);
  const double d = static_cast<double>(z.size());
  const double q = z.dot(r.inverse * z);
  const double a = p.lambda.dot(r.inv_root * z);
  return kLog2 - d * kLogSqrt2Pi - 0.5 * r.log_det - 0.5 * q + norm_logcdf(a);
}

double mv_st_logpdf(const Eigen::VectorXd& t, const MvSkewParams& p) {
  check_dims(t, p);
  if (!p.nu) throw std::invalid_argument("mv_st_logpdf requires nu");
  const double nu = *p.nu;
  require_nu(nu);
  const SymmetricRoot r(p.sigma);
  const double d = static_cast<double>(t.size());
  const double q = t.dot(r.inverse * t);
  const double log_t = std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) -
                       0.5 * d * std::log(nu * kPi) - 0.5 * r.log_det -
                       0.5 * (nu + d) * std::log1p(q / nu);
  const double a = p.lambda.dot(r.inv_root * t) * std::sqrt((nu + d) / (q + nu));
  return kLog2 + log_t + t_logcdf_fast(a, nu + d);
}

Eigen::VectorXd marginal_delta(const SymmetricRoot& root, const Eigen::VectorXd& lambda) {
  return root.root * lambda / std::sqrt(1.0 + lambda.squaredNorm());
}

Eigen::VectorXd skewness_from_delta(const Eigen::VectorXd& delta) {
  Eigen::VectorXd out(delta.size());
  for (Eigen::Index j = 0; j < delta.size(); ++j) {
    const double dj = delta[j];
    if (!(std::abs(dj) < 1.0)) {
      throw InvalidSkewness("inadmissible (sigma, lambda): |delta*| >= 1 at coordinate " +
                            std::to_string(j));
    }
    out[j] = dj / std::sqrt(1.0 - dj * dj);
  }
  return out;
}

Eigen::VectorXd marginal_skewness(const MvSkewParams& p) {
  if (p.sigma.rows() != p.lambda.size()) throw std::invalid_argument("dimension mismatch");
  const SymmetricRoot r(p.sigma);
  return skewness_from_delta(marginal_delta(r, p.lambda));
}

}  // namespace copglmm
