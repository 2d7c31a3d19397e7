#include "copglmm/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "copglmm/distributions.hpp"
#include "copglmm/selection.hpp"

namespace copglmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MarginalParams theta_from_working(const Eigen::VectorXd& w, MarginalFamily family) {
  const Eigen::Index p = w.size() - 2;
  MarginalParams t;
  t.family = family;
  t.beta = w.head(p);
  t.variance = std::exp(w[p]);
  t.shape_or_sd = std::exp(w[p + 1]);
  return t;
}

Eigen::VectorXd theta_to_working(const MarginalParams& t) {
  const Eigen::Index p = t.beta.size();
  Eigen::VectorXd w(p + 2);
  w.head(p) = t.beta;
  w[p] = std::log(t.variance);
  w[p + 1] = std::log(t.shape_or_sd);
  return w;
}

int stage2_dim(CopulaFamily family) { return is_skew(family) ? 2 : 1; }

Eigen::VectorXd phi_to_working(const CopulaParams& phi, CopulaFamily family) {
  Eigen::VectorXd w(stage2_dim(family));
  w[0] = phi.xi;
  if (is_skew(family)) w[1] = phi.lambda_bar;
  return w;
}

// Ranks (1-based, ties averaged).
Eigen::VectorXd ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Eigen::VectorXd r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean(), db = b.array() - b.mean();
  const double denom = std::sqrt((da * da).sum() * (db * db).sum());
  return denom > 0.0 ? (da * db).sum() / denom : 0.0;
}

// Symmetric-matrix inverse with a rank check.
Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& a, const std::string& block) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || !ev.allFinite() || ev.cwiseAbs().minCoeff() <= 1e-12 * scale) {
    throw RankDeficiencyError(block);
  }
  return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

// Hessian of f by second central differences.
Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index j = 0; j < n; ++j) h[j] = std::max(1e-4, 1e-4 * std::abs(x[j]));
  const double f0 = f(x);
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    xp[j] = x[j] + h[j];
    const double fp = f(xp);
    xp[j] = x[j] - h[j];
    const double fm = f(xp);
    xp[j] = x[j];
    hess(j, j) = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
    for (Eigen::Index k = 0; k < j; ++k) {
      double acc = 0.0;
      for (int sj : {1, -1}) {
        for (int sk : {1, -1}) {
          xp[j] = x[j] + sj * h[j];
          xp[k] = x[k] + sk * h[k];
          acc += sj * sk * f(xp);
        }
      }
      xp[j] = x[j];
      xp[k] = x[k];
      hess(j, k) = hess(k, j) = acc / (4.0 * h[j] * h[k]);
    }
  }
  return hess;
}

}  // namespace

MarginalParams stage1_start(const LongitudinalDataset& data, MarginalFamily family) {
  validate(data);
  const int p = n_fixed_effects(data);
  const int n = data.n_observations();
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  int row = 0;
  for (const auto& s : data.subjects) {
    x.middleRows(row, s.size()) = design_matrix(s);
    for (int j = 0; j < s.size(); ++j) {
      const double v = s.responses[j];
      if (family == MarginalFamily::GammaLog && !(v > 0.0)) {
        throw std::invalid_argument("Gamma marginals need positive responses (subject " + s.id + ")");
      }
      y[row + j] = family == MarginalFamily::GammaLog ? std::log(v) : v;
    }
    row += s.size();
  }
  MarginalParams t;
  t.family = family;
  t.beta = x.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd r = y - x * t.beta;

  // within-subject and between-subject residual variance
  double within = 0.0, between = 0.0;
  int within_df = 0;
  row = 0;
  for (const auto& s : data.subjects) {
    const Eigen::VectorXd ri = r.segment(row, s.size());
    const double mean = ri.mean();
    within += (ri.array() - mean).square().sum();
    within_df += s.size() - 1;
    between += mean * mean;
    row += s.size();
  }
  const double total = r.squaredNorm() / std::max(1, n - p);
  within = within_df > 0 ? within / within_df : total;
  const double avg_n = static_cast<double>(n) / data.n_subjects();
  between = between / data.n_subjects() - within / avg_n;
  t.variance = std::max(between, 0.05 * total);
  if (family == MarginalFamily::NormalIdentity) {
    t.shape_or_sd = std::sqrt(std::max(within, 1e-6));
  } else {
    // var(log e) = trigamma(kappa) ~ 1/kappa + 1/(2 kappa^2), E log e ~ -1/(2 kappa)
    const double s2 = std::max(within, 1e-6);
    t.shape_or_sd = (1.0 + std::sqrt(1.0 + 2.0 * s2)) / (2.0 * s2);
    t.beta[0] += 0.5 / t.shape_or_sd;
  }
  return t;
}

Stage1Result fit_stage1(const LongitudinalDataset& data, MarginalFamily family, const QuadratureRule& rule,
                        const std::optional<MarginalParams>& init, const OptimOptions& options) {
  validate(data);
  MarginalParams start = init ? *init : stage1_start(data, family);
  start.family = family;
  validate(start);
  const double m = data.n_subjects();
  auto objective = [&](const Eigen::VectorXd& w) {
    try {
      return -stage1_loglik(theta_from_working(w, family), data, rule) / m;
    } catch (const EvaluationError&) {
      return kInf;
    } catch (const std::domain_error&) {
      return kInf;
    }
  };
  const Eigen::VectorXd w0 = theta_to_working(start);
  const Eigen::Index p = w0.size() - 2;
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(w0.size(), -kInf), hi = Eigen::VectorXd::Constant(w0.size(), kInf);
  lo[p] = std::log(1e-8);
  hi[p] = std::log(1e4);
  lo[p + 1] = std::log(1e-4);
  hi[p + 1] = std::log(1e4);
  const OptimResult r = minimize_box(objective, w0, lo, hi, options);
  Stage1Result out;
  out.theta = theta_from_working(r.x, family);
  out.loglik = -r.value * m;
  out.convergence = r.status;
  out.iterations = r.iterations;
  return out;
}

double xi_start(const LongitudinalDataset& data, const MarginalParams& theta_hat) {
  // pairs of PIT residuals pooled by lag
  std::map<long long, std::pair<std::vector<double>, std::vector<double>>> by_lag;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subjects[i];
    const Eigen::VectorXd eta0 = design_matrix(s) * theta_hat.beta;
    const double b = posterior_mode(s, eta0, theta_hat).mode;
    std::vector<double> u(s.size());
    for (int j = 0; j < s.size(); ++j) u[j] = marginal_cdf(s.responses[j], eta0[j] + b, theta_hat);
    for (int j = 0; j < s.size(); ++j) {
      for (int k = j + 1; k < s.size(); ++k) {
        const long long key = std::llround((s.times[k] - s.times[j]) * 1e6);
        by_lag[key].first.push_back(u[j]);
        by_lag[key].second.push_back(u[k]);
      }
    }
  }
  double num = 0.0, den = 0.0;
  for (const auto& [key, pairs] : by_lag) {
    const auto& [a, b] = pairs;
    if (a.size() < 5) continue;
    const double rho_s = pearson(ranks(a), ranks(b));
    const double r = 2.0 * std::sin(std::numbers::pi * rho_s / 6.0);
    if (r <= 0.02) continue;
    const double lag = key * 1e-6;
    const double w = static_cast<double>(a.size());
    num += -w * lag * std::log(std::min(r, 0.999));
    den += w * lag * lag;
  }
  if (!(den > 0.0)) return 0.5;
  return std::clamp(num / den, 0.01, 10.0);
}

Stage2Result fit_stage2(const LongitudinalDataset& data, CopulaFamily family, const MarginalParams& theta_hat,
                        const QuadratureRule& rule, std::optional<double> nu, const std::optional<CopulaParams>& init,
                        const Stage2Bounds& bounds, const OptimOptions& options) {
  validate(data);
  const Stage2Workspace ws(theta_hat, family, nu, data, rule);
  const double m = data.n_subjects();
  const bool skew = is_skew(family);
  auto objective = [&](const Eigen::VectorXd& w) {
    try {
      return -ws.loglik(w[0], skew ? w[1] : 0.0) / m;
    } catch (const EvaluationError&) {
      return kInf;
    } catch (const std::domain_error&) {
      return kInf;
    }
  };
  Eigen::VectorXd lo(stage2_dim(family)), hi(stage2_dim(family));
  lo[0] = bounds.xi_lower;
  hi[0] = bounds.xi_upper;
  if (skew) {
    lo[1] = bounds.lambda_lower;
    hi[1] = bounds.lambda_upper;
  }
  Eigen::VectorXd w0(stage2_dim(family));
  if (init) {
    w0 = phi_to_working(*init, family);
  } else {
    // The skewness score vanishes at lambda_bar = 0, so that point cannot
    // serve as a start. Profile a coarse lattice instead.
    w0.setZero();
    Eigen::VectorXd probe = w0;
    double best = kInf;
    for (double xi : {xi_start(data, theta_hat), 0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2}) {
      probe[0] = xi;
      if (skew) probe[1] = 0.0;
      const double v = objective(probe.cwiseMax(lo).cwiseMin(hi));
      if (v < best) {
        best = v;
        w0[0] = xi;
      }
    }
    if (skew) {
      probe[0] = w0[0];
      best = kInf;
      for (double lam : {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0}) {
        probe[1] = lam;
        const double v = objective(probe.cwiseMax(lo).cwiseMin(hi));
        if (v < best) {
          best = v;
          w0[1] = lam;
        }
      }
    }
  }
  w0 = w0.cwiseMax(lo).cwiseMin(hi);
  const OptimResult r = minimize_box(objective, w0, lo, hi, options);
  Stage2Result out;
  out.phi.xi = r.x[0];
  out.phi.lambda_bar = skew ? r.x[1] : 0.0;
  out.phi.nu = has_nu(family) ? nu : std::nullopt;
  out.loglik = -r.value * m;
  out.convergence = r.status;
  out.iterations = r.iterations;
  return out;
}

NuGridResult nu_grid_search(const LongitudinalDataset& data, CopulaFamily family, const MarginalParams& theta_hat,
                            const QuadratureRule& rule, const std::vector<int>& grid, const Stage2Bounds& bounds,
                            const OptimOptions& options) {
  if (!has_nu(family)) throw std::invalid_argument("nu grid search needs a t or skew-t copula");
  if (grid.empty()) throw std::invalid_argument("nu grid is empty");
  NuGridResult out;
  bool found = false;
  for (int nu : grid) {
    if (nu <= 0) throw std::invalid_argument("nu grid values must be positive");
    try {
      Stage2Result r = fit_stage2(data, family, theta_hat, rule, static_cast<double>(nu), std::nullopt, bounds, options);
      out.table.emplace_back(nu, r.loglik);
      if (!found || r.loglik > out.best.loglik) {
        out.best = std::move(r);
        out.nu = nu;
        found = true;
      }
    } catch (const std::exception& e) {
      out.warnings.push_back("nu=" + std::to_string(nu) + " skipped: " + e.what());
    }
  }
  if (!found) throw std::runtime_error("stage-2 fit failed for every nu in the grid");
  return out;
}

Eigen::VectorXd working_vector(const ModelParams& params, CopulaFamily family) {
  const Eigen::VectorXd a = theta_to_working(params.theta), b = phi_to_working(params.phi, family);
  Eigen::VectorXd w(a.size() + b.size());
  w << a, b;
  return w;
}

Eigen::VectorXd natural_vector(const ModelParams& params, CopulaFamily family) {
  const Eigen::Index p = params.theta.beta.size();
  Eigen::VectorXd v(p + 2 + stage2_dim(family));
  v.head(p) = params.theta.beta;
  v[p] = params.theta.variance;
  v[p + 1] = params.theta.shape_or_sd;
  v[p + 2] = params.phi.xi;
  if (is_skew(family)) v[p + 3] = params.phi.lambda_bar;
  return v;
}

std::vector<std::string> parameter_names(const LongitudinalDataset& data, MarginalFamily marginal,
                                         CopulaFamily copula) {
  std::vector<std::string> names = fixed_effect_names(data);
  names.push_back("V");
  names.push_back(dispersion_name(marginal));
  names.push_back("xi");
  if (is_skew(copula)) names.push_back("lambda_bar");
  return names;
}

Eigen::MatrixXd subject_scores(const ModelParams& params, CopulaFamily family, const LongitudinalDataset& data,
                               const QuadratureRule& rule) {
  const Eigen::VectorXd w1 = theta_to_working(params.theta);
  const Eigen::VectorXd w2 = phi_to_working(params.phi, family);
  const Eigen::Index k1 = w1.size(), k2 = w2.size();
  const int m = data.n_subjects();
  const MarginalFamily mf = params.theta.family;
  Eigen::MatrixXd psi(m, k1 + k2);
  Eigen::VectorXd wp = w1;
  for (Eigen::Index j = 0; j < k1; ++j) {
    const double h = fd_step(w1[j]);
    wp[j] = w1[j] + h;
    const Eigen::VectorXd cp = stage1_contributions(theta_from_working(wp, mf), data, rule);
    wp[j] = w1[j] - h;
    const Eigen::VectorXd cm = stage1_contributions(theta_from_working(wp, mf), data, rule);
    wp[j] = w1[j];
    psi.col(j) = (cp - cm) / (2.0 * h);
  }
  const Stage2Workspace ws(params.theta, family, params.phi.nu, data, rule);
  auto contrib = [&](const Eigen::VectorXd& w) { return ws.contributions(w[0], k2 > 1 ? w[1] : 0.0); };
  Eigen::VectorXd vp = w2;
  for (Eigen::Index j = 0; j < k2; ++j) {
    const double h = fd_step(w2[j]);
    vp[j] = w2[j] + h;
    const Eigen::VectorXd cp = contrib(vp);
    vp[j] = w2[j] - h;
    const Eigen::VectorXd cm = contrib(vp);
    vp[j] = w2[j];
    psi.col(k1 + j) = (cp - cm) / (2.0 * h);
  }
  return psi;
}

GodambeMatrices godambe(const ModelParams& params, CopulaFamily family, const LongitudinalDataset& data,
                        const QuadratureRule& rule) {
  const int m = data.n_subjects();
  const MarginalFamily mf = params.theta.family;
  const Eigen::MatrixXd psi = subject_scores(params, family, data, rule);
  const Eigen::Index k = psi.cols();
  const Eigen::VectorXd w1 = theta_to_working(params.theta);
  const Eigen::VectorXd w2 = phi_to_working(params.phi, family);
  const Eigen::Index k1 = w1.size(), k2 = w2.size();

  GodambeMatrices g;
  g.mean_score = psi.colwise().mean().transpose();
  g.m_psi = psi.transpose() * psi / m;

  const Eigen::MatrixXd h1 = fd_hessian(
      [&](const Eigen::VectorXd& w) { return stage1_loglik(theta_from_working(w, mf), data, rule); }, w1);
  const Stage2Workspace ws(params.theta, family, params.phi.nu, data, rule);
  const Eigen::MatrixXd h2 =
      fd_hessian([&](const Eigen::VectorXd& w) { return ws.loglik(w[0], k2 > 1 ? w[1] : 0.0); }, w2);
  g.d_psi = Eigen::MatrixXd::Zero(k, k);
  g.d_psi.topLeftCorner(k1, k1) = h1 / m;
  g.d_psi.bottomRightCorner(k2, k2) = h2 / m;

  const Eigen::MatrixXd d1_inv = checked_inverse(g.d_psi.topLeftCorner(k1, k1), "D (stage 1)");
  const Eigen::MatrixXd d2_inv = checked_inverse(g.d_psi.bottomRightCorner(k2, k2), "D (stage 2)");
  Eigen::MatrixXd d_inv = Eigen::MatrixXd::Zero(k, k);
  d_inv.topLeftCorner(k1, k1) = d1_inv;
  d_inv.bottomRightCorner(k2, k2) = d2_inv;

  const Eigen::MatrixXd m_inv = checked_inverse(g.m_psi, "M");
  g.j_psi = g.d_psi.transpose() * m_inv * g.d_psi;
  g.j_psi = 0.5 * (g.j_psi + g.j_psi.transpose()).eval();
  // J^-1 = D^-1 M D^-T
  Eigen::MatrixXd j_inv = d_inv * g.m_psi * d_inv.transpose();
  j_inv = 0.5 * (j_inv + j_inv.transpose()).eval();
  g.working_std_errors = (j_inv.diagonal().array().max(0.0) / m).sqrt();

  g.std_errors = g.working_std_errors;
  const Eigen::Index p = params.theta.beta.size();
  g.std_errors[p] *= params.theta.variance;
  g.std_errors[p + 1] *= params.theta.shape_or_sd;
  return g;
}

double posterior_mode_b(int subject_index, const MarginalParams& theta, const LongitudinalDataset& data) {
  if (subject_index < 0 || subject_index >= data.n_subjects()) throw std::out_of_range("subject index");
  const auto& s = data.subjects[subject_index];
  return posterior_mode(s, design_matrix(s) * theta.beta, theta).mode;
}

namespace {

ConvergenceStatus worst(ConvergenceStatus a, ConvergenceStatus b) {
  if (a == ConvergenceStatus::LineSearchFailure || b == ConvergenceStatus::LineSearchFailure) {
    return ConvergenceStatus::LineSearchFailure;
  }
  if (a == ConvergenceStatus::MaxIter || b == ConvergenceStatus::MaxIter) return ConvergenceStatus::MaxIter;
  return ConvergenceStatus::Converged;
}

}  // namespace

FitResult fit_model(const LongitudinalDataset& data, const FitOptions& options,
                    const std::optional<Stage1Result>& stage1) {
  validate(data);
  const QuadratureRule rule = gauss_hermite(options.quad_points, options.quad_mode);
  FitResult out;
  out.marginal = options.marginal;
  out.copula = options.copula;
  out.n_subjects = data.n_subjects();
  out.quad_points = options.quad_points;

  const Stage1Result s1 = stage1 && stage1->theta.family == options.marginal
                              ? *stage1
                              : fit_stage1(data, options.marginal, rule, std::nullopt, options.optim);
  out.stage1_loglik = s1.loglik;
  out.stage1_convergence = s1.convergence;

  Stage2Result s2;
  if (has_nu(options.copula)) {
    if (!options.nu_grid.empty()) {
      NuGridResult g = nu_grid_search(data, options.copula, s1.theta, rule, options.nu_grid, options.bounds,
                                      options.optim);
      s2 = g.best;
      out.nu_selected = g.nu;
      out.nu_table = std::move(g.table);
      for (auto& w : g.warnings) out.warnings.push_back(std::move(w));
    } else {
      if (!options.nu) throw std::invalid_argument(to_string(options.copula) + " copula needs nu or a nu grid");
      s2 = fit_stage2(data, options.copula, s1.theta, rule, options.nu, std::nullopt, options.bounds, options.optim);
      if (detail::integer_nu(*options.nu)) out.nu_selected = static_cast<int>(*options.nu);
    }
  } else {
    if (options.nu || !options.nu_grid.empty()) {
      out.warnings.push_back("nu ignored for the " + to_string(options.copula) + " copula");
    }
    s2 = fit_stage2(data, options.copula, s1.theta, rule, std::nullopt, std::nullopt, options.bounds, options.optim);
  }
  out.stage2_convergence = s2.convergence;
  out.convergence = worst(s1.convergence, s2.convergence);
  out.params = {s1.theta, s2.phi};
  out.loglik = full_loglik(out.params, options.copula, data, rule);

  const int k = count_parameters({static_cast<int>(s1.theta.beta.size()), options.marginal, options.copula});
  out.aic = aic(out.loglik, k);
  out.bic = bic(out.loglik, k, out.n_subjects);

  out.names = parameter_names(data, options.marginal, options.copula);
  out.estimates = natural_vector(out.params, options.copula);
  out.std_errors = Eigen::VectorXd::Constant(out.estimates.size(), std::numeric_limits<double>::quiet_NaN());
  out.mean_score = out.std_errors;
  if (options.standard_errors) {
    try {
      const GodambeMatrices g = godambe(out.params, options.copula, data, rule);
      out.std_errors = g.std_errors;
      out.mean_score = g.mean_score;
    } catch (const RankDeficiencyError& e) {
      out.warnings.push_back(e.what());
    }
  }
  return out;
}

}  // namespace copglmm
