#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "copglmm/copulas.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace copglmm;
using doctest::Approx;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

const std::vector<double> kGrid{0.02, 0.2, 0.5, 0.8, 0.98};

// Bivariate skew-t density written out by hand (unit-diagonal scale).
struct BivariateSkewT {
  double r, l1, l2, nu;

  double operator()(double x, double y) const {
    const double det = 1.0 - r * r;
    const double q = (x * x - 2.0 * r * x * y + y * y) / det;
    const double t2 = std::pow(1.0 + q / nu, -0.5 * (nu + 2.0)) / (2.0 * std::numbers::pi * std::sqrt(det));
    // symmetric inverse root of [[1, r], [r, 1]]
    const double a = 1.0 / std::sqrt(1.0 + r), b = 1.0 / std::sqrt(1.0 - r);
    const double w1 = 0.5 * ((a + b) * x + (a - b) * y), w2 = 0.5 * ((a - b) * x + (a + b) * y);
    const double arg = (l1 * w1 + l2 * w2) * std::sqrt((nu + 2.0) / (q + nu));
    return 2.0 * t2 * boost::math::cdf(boost::math::students_t_distribution<double>(nu + 2.0), arg);
  }
};

// Gauss-Legendre over the real line through x = tan(theta).
struct LineRule {
  std::vector<double> x, w;
  explicit LineRule(int n) {
    std::vector<double> gx, gw;
    oracle::gauss_legendre(n, gx, gw);
    for (int i = 0; i < n; ++i) {
      const double th = 0.5 * std::numbers::pi * gx[i];
      x.push_back(std::tan(th));
      w.push_back(0.5 * std::numbers::pi * gw[i] / (std::cos(th) * std::cos(th)));
    }
  }
};

double kendall_tau(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  long long conc = 0, disc = 0;
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0) ++conc;
      else if (s < 0) ++disc;
    }
  }
  return static_cast<double>(conc - disc) / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double ks_uniform(Eigen::VectorXd u) {
  std::sort(u.data(), u.data() + u.size());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
  }
  return d;
}

}  // namespace

TEST_CASE("ar1 correlation") {
  const auto r = ar1_correlation(0.25, vec({1, 2, 3, 4}));
  CHECK(r(0, 1) == Approx(0.7788007831).epsilon(1e-10));
  CHECK(r(0, 2) == Approx(0.6065306597).epsilon(1e-10));
  CHECK(r(3, 3) == 1.0);
  CHECK((r - r.transpose()).norm() == 0.0);
  CHECK(ar1_correlation(0.0, vec({0.0, 0.5, 7.0})).isApprox(Eigen::MatrixXd::Ones(3, 3)));
  CHECK_THROWS_AS(ar1_correlation(-1.0, vec({0, 1})), std::invalid_argument);
}

TEST_CASE("family names round trip") {
  for (auto f : {CopulaFamily::Gaussian, CopulaFamily::StudentT, CopulaFamily::SkewNormal, CopulaFamily::SkewT}) {
    CHECK(parse_copula_family(to_string(f)) == f);
  }
  CHECK(parse_copula_family("Skew-T") == CopulaFamily::SkewT);
  CHECK_THROWS(parse_copula_family("clayton"));
}

TEST_CASE("quantile map agrees with the exact solver") {
  struct Case { CopulaFamily f; double lambda; std::optional<double> nu; };
  const std::vector<Case> cases{{CopulaFamily::SkewNormal, 1.3, {}},  {CopulaFamily::SkewNormal, -4.0, {}},
                                {CopulaFamily::StudentT, 0.0, 3.0},   {CopulaFamily::SkewT, 0.8, 3.0},
                                {CopulaFamily::SkewT, -2.5, 5.0},     {CopulaFamily::SkewT, 1.0, 1.0}};
  for (const auto& c : cases) {
    const QuantileMap q(c.f, c.lambda, c.nu);
    for (double u : {1e-10, 1e-7, 0.003, 0.2, 0.5, 0.77, 0.999, 1.0 - 1e-10}) {
      const double exact = c.nu ? detail::st_quantile_std(u, c.lambda, *c.nu) : detail::sn_quantile_std(u, c.lambda);
      // at the clamp the skew-t CDF itself is only good to ~1e-18 absolute
      const bool extreme = u < 1e-6 || u > 1.0 - 1e-6;
      CHECK(q(u) == Approx(exact).epsilon(extreme ? 1e-8 : 1e-12));
    }
  }
}

TEST_CASE("copula nesting") {
  const auto times = vec({0, 1, 2.5, 4});
  const auto sigma = ar1_correlation(0.25, times);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4), one = Eigen::VectorXd::Ones(4);
  const CopulaKernel g(CopulaFamily::Gaussian, sigma, zero, std::nullopt);
  const CopulaKernel sn0(CopulaFamily::SkewNormal, sigma, zero, std::nullopt);
  const CopulaKernel t(CopulaFamily::StudentT, sigma, zero, 4.0);
  const CopulaKernel st0(CopulaFamily::SkewT, sigma, zero, 4.0);
  const CopulaKernel t_big(CopulaFamily::StudentT, sigma, zero, 1e6);
  const CopulaKernel sn1(CopulaFamily::SkewNormal, sigma, one, std::nullopt);
  const CopulaKernel st_big(CopulaFamily::SkewT, sigma, one, 1e6);
  for (double a : kGrid) {
    for (double b : kGrid) {
      const auto u = vec({a, b, 1.0 - a, 0.5 * (a + b)});
      CHECK(std::abs(g.logdensity(u) - sn0.logdensity(u)) <= 1e-9);
      CHECK(std::abs(t.logdensity(u) - st0.logdensity(u)) <= 1e-9);
      // nu -> infinity
      CHECK(std::abs(t_big.logdensity(u) - g.logdensity(u)) <= 1e-3);
      CHECK(std::abs(st_big.logdensity(u) - sn1.logdensity(u)) <= 1e-3);
    }
  }
  // the free function agrees with the kernel
  const auto u = vec({0.1, 0.4, 0.6, 0.95});
  CHECK(copula_logdensity(u, CopulaFamily::SkewNormal, {0.25, 1.0, {}}, times) == sn1.logdensity(u));
}

TEST_CASE("independence and dimension one") {
  const auto times = vec({0, 1, 2});
  for (double a : kGrid) {
    const auto u = vec({a, 1.0 - a, 0.37});
    CHECK(std::abs(copula_logdensity(u, CopulaFamily::Gaussian, {1e3, 0.0, {}}, times)) < 1e-6);
  }
  CHECK(copula_logdensity(vec({0.3}), CopulaFamily::SkewT, {0.25, 2.0, 3.0}, vec({0})) == 0.0);
  CHECK_THROWS_AS(copula_logdensity(vec({0.3, 0.4}), CopulaFamily::StudentT, {0.25, 0.0, {}}, vec({0, 1})),
                  std::invalid_argument);
}

TEST_CASE("skew-t copula density against a bivariate numerical oracle") {
  const double nu = 5.0, r = std::exp(-0.25), lam = 1.0;
  const BivariateSkewT h{r, lam, lam, nu};
  const LineRule rule(240);
  // marginal density of coordinate 1 (coordinate 2 is the same by symmetry)
  auto f1 = [&](double x) {
    double s = 0.0;
    for (std::size_t i = 0; i < rule.x.size(); ++i) s += rule.w[i] * h(x, rule.x[i]);
    return s;
  };
  auto f2 = [&](double y) {
    double s = 0.0;
    for (std::size_t i = 0; i < rule.x.size(); ++i) s += rule.w[i] * h(rule.x[i], y);
    return s;
  };
  std::vector<double> hx, hw;
  oracle::gauss_legendre(160, hx, hw);
  auto cdf = [&](const auto& f, double q) {
    // (-inf, q] through x = q - tan(theta), theta in [0, pi/2)
    double s = 0.0;
    for (std::size_t i = 0; i < hx.size(); ++i) {
      const double th = 0.25 * std::numbers::pi * (hx[i] + 1.0);
      s += 0.25 * std::numbers::pi * hw[i] * f(q - std::tan(th)) / (std::cos(th) * std::cos(th));
    }
    return s;
  };
  auto quantile = [&](const auto& f, double u) {
    double q = 0.0;
    for (int it = 0; it < 12; ++it) q -= (cdf(f, q) - u) / f(q);
    return q;
  };
  const double q1 = quantile(f1, 0.3), q2 = quantile(f2, 0.7);
  const double oracle_c = h(q1, q2) / (f1(q1) * f2(q2));
  const double got = std::exp(copula_logdensity(vec({0.3, 0.7}), CopulaFamily::SkewT, {0.25, lam, nu}, vec({0, 1})));
  CHECK(got == Approx(oracle_c).epsilon(1e-3));
}

TEST_CASE("bivariate copula densities integrate to one") {
  std::vector<double> gx, gw;
  oracle::gauss_legendre(120, gx, gw);
  const double half = 8.0;
  struct Case { CopulaFamily f; CopulaParams p; };
  const std::vector<Case> cases{{CopulaFamily::Gaussian, {0.25, 0.0, {}}},
                                {CopulaFamily::StudentT, {0.25, 0.0, 3.0}},
                                {CopulaFamily::SkewNormal, {0.25, 1.0, {}}},
                                {CopulaFamily::SkewT, {0.25, -1.5, 4.0}}};
  for (const auto& c : cases) {
    const CopulaKernel k(c.f, ar1_correlation(c.p.xi, vec({0, 1})), Eigen::VectorXd::Constant(2, c.p.lambda_bar),
                         c.p.nu);
    double total = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s1 = half * gx[i];
      for (std::size_t j = 0; j < gx.size(); ++j) {
        const double s2 = half * gx[j];
        const double w = half * half * gw[i] * gw[j] * oracle::phi(s1) * oracle::phi(s2);
        total += w * std::exp(k.logdensity(vec({oracle::Phi(s1), oracle::Phi(s2)})));
      }
    }
    CHECK(total == Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("sampler: independence, lag-one correlation, uniform margins") {
  std::mt19937_64 rng(12345);
  const int n = 20000;
  const auto times = vec({0, 1});
  const auto ind = copula_sample(n, CopulaFamily::Gaussian, {1e3, 0.0, {}}, times, rng);
  CHECK(std::abs(kendall_tau(ind.col(0), ind.col(1))) < 0.02);

  const auto dep = copula_sample(n, CopulaFamily::Gaussian, {0.25, 0.0, {}}, times, rng);
  Eigen::VectorXd z1(n), z2(n);
  for (int i = 0; i < n; ++i) {
    z1[i] = norm_quantile(dep(i, 0));
    z2[i] = norm_quantile(dep(i, 1));
  }
  const double cz = ((z1.array() - z1.mean()) * (z2.array() - z2.mean())).mean();
  const double pearson = cz / std::sqrt((z1.array() - z1.mean()).square().mean() * (z2.array() - z2.mean()).square().mean());
  CHECK(pearson == Approx(0.7788).epsilon(0.01 / 0.7788));

  const auto sn = copula_sample(n, CopulaFamily::SkewNormal, {0.25, 1.0, {}}, vec({0, 1, 2}), rng);
  for (int j = 0; j < 3; ++j) CHECK(ks_uniform(sn.col(j)) < 0.015);
  const auto st = copula_sample(n, CopulaFamily::SkewT, {0.25, 1.0, 3.0}, vec({0, 1, 2}), rng);
  for (int j = 0; j < 3; ++j) CHECK(ks_uniform(st.col(j)) < 0.015);
}

TEST_CASE("sampler frequencies match density cell masses") {
  const int n = 50000, bins = 10;
  std::vector<double> gx, gw;
  oracle::gauss_legendre(12, gx, gw);
  struct Case { CopulaFamily f; CopulaParams p; };
  const std::vector<Case> cases{{CopulaFamily::SkewNormal, {0.25, 1.0, {}}}, {CopulaFamily::SkewT, {0.25, 1.0, 5.0}}};
  std::mt19937_64 rng(2024);
  for (const auto& c : cases) {
    const auto times = vec({0, 1});
    const CopulaKernel k(c.f, ar1_correlation(c.p.xi, times), Eigen::VectorXd::Constant(2, c.p.lambda_bar), c.p.nu);
    // cell edges in normal-score space, outer cells truncated at +-8.5
    std::vector<double> edge(bins + 1);
    for (int b = 0; b <= bins; ++b) {
      edge[b] = b == 0 ? -8.5 : b == bins ? 8.5 : norm_quantile(static_cast<double>(b) / bins);
    }
    Eigen::MatrixXd expected(bins, bins);
    for (int a = 0; a < bins; ++a) {
      for (int b = 0; b < bins; ++b) {
        const double ha = 0.5 * (edge[a + 1] - edge[a]), hb = 0.5 * (edge[b + 1] - edge[b]);
        double mass = 0.0;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double s1 = edge[a] + ha * (gx[i] + 1.0);
          for (std::size_t j = 0; j < gx.size(); ++j) {
            const double s2 = edge[b] + hb * (gx[j] + 1.0);
            mass += ha * hb * gw[i] * gw[j] * oracle::phi(s1) * oracle::phi(s2) *
                    std::exp(k.logdensity(vec({oracle::Phi(s1), oracle::Phi(s2)})));
          }
        }
        expected(a, b) = mass * n;
      }
    }
    CHECK(expected.sum() == Approx(n).epsilon(2e-3));
    const auto draws = copula_sample(n, c.f, c.p, times, rng);
    Eigen::MatrixXd observed = Eigen::MatrixXd::Zero(bins, bins);
    for (int i = 0; i < n; ++i) {
      const int a = std::min(bins - 1, static_cast<int>(draws(i, 0) * bins));
      const int b = std::min(bins - 1, static_cast<int>(draws(i, 1) * bins));
      observed(a, b) += 1.0;
    }
    const double chi2 = ((observed - expected).array().square() / expected.array()).sum();
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(bins * bins - 1), chi2));
    INFO("chi2 = " << chi2);
    CHECK(p > 0.001);
  }
}

TEST_CASE("AR(1) reversal symmetry and its limits") {
  const auto times = vec({1, 2, 3});
  const CopulaParams p{0.4, 1.2, 4.0};
  const auto u = vec({0.15, 0.6, 0.9});
  const double base = copula_logdensity(u, CopulaFamily::SkewT, p, times);
  const double swap13 = copula_logdensity(vec({0.9, 0.6, 0.15}), CopulaFamily::SkewT, p, times);
  const double swap12 = copula_logdensity(vec({0.6, 0.15, 0.9}), CopulaFamily::SkewT, p, times);
  CHECK(swap13 == Approx(base).epsilon(1e-10));
  CHECK(std::abs(swap12 - base) > 1e-3);
}

TEST_CASE("inadmissible inputs propagate") {
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 1.5, 1.5, 1.0;
  CHECK_THROWS_AS(copula_logdensity(vec({0.3, 0.4}), CopulaFamily::Gaussian, bad, vec({0, 0}), std::nullopt),
                  DecompositionError);
}
