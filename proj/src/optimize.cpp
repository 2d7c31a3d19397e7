#include "copglmm/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace copglmm {

std::string to_string(ConvergenceStatus s) {
  switch (s) {
    case ConvergenceStatus::Converged: return "converged";
    case ConvergenceStatus::MaxIter: return "max-iter";
    case ConvergenceStatus::LineSearchFailure: return "line-search-failure";
  }
  return "unknown";
}

ConvergenceStatus parse_convergence_status(const std::string& name) {
  if (name == "converged") return ConvergenceStatus::Converged;
  if (name == "max-iter") return ConvergenceStatus::MaxIter;
  if (name == "line-search-failure") return ConvergenceStatus::LineSearchFailure;
  throw std::invalid_argument("unknown convergence status: " + name);
}

double fd_step(double x) { return std::max(1e-5, 1e-5 * std::abs(x)); }

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& lower,
                            const Eigen::VectorXd& upper, int* evaluations) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x;
  int evals = 0;
  double f0 = 0.0;
  bool have_f0 = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = fd_step(x[j]);
    const bool room_up = x[j] + h <= upper[j], room_down = x[j] - h >= lower[j];
    if (room_up && room_down) {
      xp[j] = x[j] + h;
      const double fp = f(xp);
      xp[j] = x[j] - h;
      const double fm = f(xp);
      evals += 2;
      g[j] = (fp - fm) / (2.0 * h);
    } else {
      if (!have_f0) {
        f0 = f(x);
        ++evals;
        have_f0 = true;
      }
      // second-order one-sided stencil
      const double s = room_up ? h : -h;
      xp[j] = x[j] + s;
      const double f1 = f(xp);
      xp[j] = x[j] + 2.0 * s;
      const double f2 = f(xp);
      evals += 2;
      g[j] = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * s);
    }
    xp[j] = x[j];
  }
  if (evaluations) *evaluations += evals;
  return g;
}

namespace {

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Gradient components that could still decrease f inside the box.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if ((x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0)) pg[j] = 0.0;
  }
  return pg;
}

}  // namespace

OptimResult minimize_box(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                         const Eigen::VectorXd& upper, const OptimOptions& options) {
  const Eigen::Index n = x0.size();
  if (lower.size() != n || upper.size() != n) throw std::invalid_argument("bound dimensions do not match");
  if ((lower.array() > upper.array()).any()) throw std::invalid_argument("lower bound exceeds upper bound");

  OptimResult r;
  r.x = project(x0, lower, upper);
  r.value = f(r.x);
  r.evaluations = 1;
  if (!std::isfinite(r.value)) throw std::runtime_error("objective is not finite at the starting point");
  r.gradient = fd_gradient(f, r.x, lower, upper, &r.evaluations);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  bool first = true;
  auto small_gradient = [&](const Eigen::VectorXd& pg) {
    return pg.lpNorm<Eigen::Infinity>() <= options.grad_tol;
  };

  for (r.iterations = 0; r.iterations < options.max_iter; ++r.iterations) {
    const Eigen::VectorXd pg = projected_gradient(r.x, r.gradient, lower, upper);
    if (small_gradient(pg)) {
      r.status = ConvergenceStatus::Converged;
      return r;
    }
    // free variables: those not pinned at a bound by the gradient
    Eigen::VectorXd mask = (pg.array() != 0.0).cast<double>();
    Eigen::VectorXd d = -(mask.asDiagonal() * h_inv * mask.asDiagonal() * r.gradient);
    if (!(d.dot(r.gradient) < 0.0)) {
      h_inv.setIdentity();
      d = -pg;
    }
    if (first) {
      // first step limited to unit length in the working parameterisation
      const double norm = d.lpNorm<Eigen::Infinity>();
      if (norm > 1.0) d /= norm;
    }

    double alpha = 1.0, trial_value = 0.0;
    Eigen::VectorXd trial;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      trial = project(r.x + alpha * d, lower, upper);
      if ((trial - r.x).lpNorm<Eigen::Infinity>() == 0.0) break;
      trial_value = f(trial);
      ++r.evaluations;
      if (std::isfinite(trial_value) && trial_value <= r.value + 1e-4 * r.gradient.dot(trial - r.x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!first && h_inv != Eigen::MatrixXd::Identity(n, n)) {
        // retry once along steepest descent before giving up
        h_inv.setIdentity();
        first = true;
        continue;
      }
      r.status = ConvergenceStatus::LineSearchFailure;
      return r;
    }

    const Eigen::VectorXd g_new = fd_gradient(f, trial, lower, upper, &r.evaluations);
    const Eigen::VectorXd s = trial - r.x, y = g_new - r.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      if (first) h_inv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - rho * s * y.transpose();
      h_inv = a * h_inv * a.transpose() + rho * s * s.transpose();
    }
    first = false;
    const double change = std::abs(r.value - trial_value);
    r.x = trial;
    r.value = trial_value;
    r.gradient = g_new;
    const Eigen::VectorXd pg_new = projected_gradient(r.x, r.gradient, lower, upper);
    if (change <= options.rel_tol * std::max(1.0, std::abs(r.value)) &&
        pg_new.lpNorm<Eigen::Infinity>() <= 5.0 * options.grad_tol) {
      r.status = ConvergenceStatus::Converged;
      ++r.iterations;
      return r;
    }
  }
  r.status = small_gradient(projected_gradient(r.x, r.gradient, lower, upper))
                 ? ConvergenceStatus::Converged
                 : ConvergenceStatus::MaxIter;
  return r;
}

}  // namespace copglmm
