#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace copglmm {

enum class ConvergenceStatus { Converged, MaxIter, LineSearchFailure };

std::string to_string(ConvergenceStatus s);
ConvergenceStatus parse_convergence_status(const std::string& name);

struct OptimOptions {
  int max_iter = 500;
  /// Relative objective change between accepted steps.
  double rel_tol = 1e-9;
  /// Absolute bound on the projected-gradient infinity norm; objectives are
  /// per-subject averages.
  double grad_tol = 1e-5;
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  ConvergenceStatus status = ConvergenceStatus::MaxIter;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Central-difference gradient with h_j = max(1e-5, 1e-5 |x_j|), switching to
/// a one-sided stencil where a bound is closer than h.
Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& lower,
                            const Eigen::VectorXd& upper, int* evaluations = nullptr);

double fd_step(double x);

/// Projected BFGS on a box with finite-difference gradients. Variables held
/// at an active bound are frozen for the step; the line search backtracks
/// along the projected path.
OptimResult minimize_box(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                         const Eigen::VectorXd& upper, const OptimOptions& options = {});

}  // namespace copglmm
