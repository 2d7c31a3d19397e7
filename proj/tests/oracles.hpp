#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numerical routes, so it can serve as an independent check on them.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace oracle {

inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                          double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

/// Adaptive Simpson on a finite interval.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12, int depth = 60) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

/// Integral over (-inf, x] via z = x - t / (1 - t), split into panels so the
/// adaptive rule sees the bulk of the mass.
inline double integrate_lower(const std::function<double(double)>& f, double x, double tol = 1e-12) {
  auto g = [&](double t) {
    if (t >= 1.0) return 0.0;
    const double z = x - t / (1.0 - t);
    const double v = f(z) / ((1.0 - t) * (1.0 - t));
    return std::isfinite(v) ? v : 0.0;
  };
  const std::vector<double> cuts{0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0};
  double total = 0.0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) total += integrate(g, cuts[i], cuts[i + 1], tol / 10.0);
  return total;
}

/// Integral over the whole line.
inline double integrate_line(const std::function<double(double)>& f, double tol = 1e-12) {
  return integrate_lower(f, 0.0, tol) + integrate_lower([&](double z) { return f(-z); }, 0.0, tol);
}

/// Plain bisection for an increasing function crossing `target`.
inline double bisect(const std::function<double(double)>& f, double target, double lo, double hi,
                     double tol = 1e-13) {
  if (f(lo) > target || f(hi) < target) throw std::runtime_error("oracle bracket invalid");
  for (int i = 0; i < 400 && hi - lo > tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal CDF from erfc in <cmath>.
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Student-t density from its textbook formula.
inline double t_density(double x, double nu) {
  return std::exp(std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu)) /
         std::sqrt(nu * std::numbers::pi) * std::pow(1.0 + x * x / nu, -0.5 * (nu + 1));
}

inline double t_cdf_quad(double x, double nu) {
  return integrate_lower([nu](double z) { return t_density(z, nu); }, x, 1e-14);
}

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    const double dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

/// Gauss-Hermite nodes by Newton iteration on the orthonormal Hermite
/// recurrence (the classical gauher scheme), independent of any eigensolver.
inline void gauss_hermite_newton(int n, std::vector<double>& x, std::vector<double>& w) {
  const double pim4 = 0.7511255444649425;  // pi^{-1/4}
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
    else if (i == 1) z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2) z = 1.86 * z - 0.86 * x[0];
    else if (i == 3) z = 1.91 * z - 0.91 * x[1];
    else z = 2.0 * z - x[i - 2];
    double pp = 0.0;
    for (int it = 0; it < 200; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
}

}  // namespace oracle
