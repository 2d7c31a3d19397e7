#include "copglmm/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

#include <Eigen/Eigenvalues>

namespace copglmm {

namespace {

constexpr int kModeIterations = 50;

double log_sum_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

// log weight + sum_j log f(y_ij | b_k) for one subject.
Eigen::VectorXd subject_log_f(const Subject& s, const Eigen::VectorXd& eta0, const MarginalParams& theta,
                              const NodeFrame& frame) {
  Eigen::VectorXd out = frame.log_w;
  for (Eigen::Index k = 0; k < frame.b.size(); ++k) {
    for (Eigen::Index j = 0; j < s.responses.size(); ++j) {
      out[k] += marginal_logpdf(s.responses[j], eta0[j] + frame.b[k], theta);
    }
  }
  return out;
}

// First and second derivative in b of sum_j log f(y_j | eta0_j + b).
std::pair<double, double> loglik_b_derivatives(const Subject& s, const Eigen::VectorXd& eta0,
                                                const MarginalParams& theta, double b) {
  const double k = theta.shape_or_sd;
  double d1 = 0.0, d2 = 0.0;
  for (Eigen::Index j = 0; j < s.responses.size(); ++j) {
    if (theta.family == MarginalFamily::GammaLog) {
      const double r = s.responses[j] * k * std::exp(-(eta0[j] + b));
      d1 += r - k;
      d2 -= r;
    } else {
      d1 += (s.responses[j] - eta0[j] - b) / (k * k);
      d2 -= 1.0 / (k * k);
    }
  }
  return {d1, d2};
}

void check_beta(const MarginalParams& theta, const LongitudinalDataset& data) {
  if (theta.beta.size() != n_fixed_effects(data)) {
    throw std::invalid_argument("beta length does not match the dataset design");
  }
  validate(theta);
}

}  // namespace

PosteriorMode posterior_mode(const Subject& s, const Eigen::VectorXd& eta0, const MarginalParams& theta) {
  const double v = theta.variance;
  auto grad = [&](double b) {
    const auto [d1, d2] = loglik_b_derivatives(s, eta0, theta, b);
    return std::pair{d1 - b / v, d2 - 1.0 / v};
  };
  // The log posterior is strictly concave, so its derivative is decreasing.
  double b = 0.0;
  auto [g, h] = grad(b);
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    if (g > 0.0) lo = b;
    else hi = b;
    double next = b - g / h;
    if (!(next > lo && next < hi)) {
      if (std::isfinite(lo) && std::isfinite(hi)) next = 0.5 * (lo + hi);
      else next = g > 0.0 ? b + std::max(1.0, std::abs(b)) : b - std::max(1.0, std::abs(b));
    }
    const double step = next - b;
    b = next;
    std::tie(g, h) = grad(b);
    if (std::abs(step) <= 1e-15 * (1.0 + std::abs(b)) || g == 0.0) break;
  }
  if (!std::isfinite(b) || !(h < 0.0)) throw std::runtime_error("posterior mode search failed");
  return {b, -h};
}

NodeFrame node_frame(const Subject& s, const Eigen::VectorXd& eta0, const MarginalParams& theta,
                     const QuadratureRule& rule) {
  NodeFrame f;
  const double half_log_pi = 0.5 * std::log(std::numbers::pi);
  if (rule.mode == QuadratureMode::Plain) {
    f.b = std::sqrt(2.0 * theta.variance) * rule.nodes;
    f.log_w = rule.weights.array().log() - half_log_pi;
    return f;
  }
  const PosteriorMode pm = posterior_mode(s, eta0, theta);
  const double scale = std::sqrt(2.0 / pm.curvature);
  const double v = theta.variance;
  f.b = pm.mode + scale * rule.nodes.array();
  f.log_w = rule.weights.array().log() + rule.nodes.array().square() + std::log(scale) -
            0.5 * std::log(2.0 * std::numbers::pi * v) - f.b.array().square() / (2.0 * v);
  return f;
}

QuadratureRule gauss_hermite(int n, QuadratureMode mode) {
  if (n < 1 || n > 100) throw std::invalid_argument("Gauss-Hermite order must lie in [1, 100]");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
  QuadratureRule rule;
  rule.mode = mode;
  if (n == 1) {
    rule.nodes = Eigen::VectorXd::Zero(1);
    rule.weights = Eigen::VectorXd::Constant(1, std::sqrt(std::numbers::pi));
    return rule;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (eig.info() != Eigen::Success) throw std::runtime_error("Jacobi eigenproblem failed");
  rule.nodes = eig.eigenvalues();
  rule.weights.resize(n);
  // Newton polish on the orthonormal Hermite recurrence; weights from the
  // Christoffel function, which keeps tiny tail weights relatively accurate.
  const double p0 = std::pow(std::numbers::pi, -0.25);
  for (int i = 0; i < n; ++i) {
    double x = rule.nodes[i], sum = 0.0;
    for (int pass = 0; pass < 3; ++pass) {
      double prev = 0.0, cur = p0;
      sum = cur * cur;
      for (int j = 0; j < n; ++j) {
        const double next = x * std::sqrt(2.0 / (j + 1)) * cur - std::sqrt(static_cast<double>(j) / (j + 1)) * prev;
        prev = cur;
        cur = next;
        if (j < n - 1) sum += cur * cur;
      }
      // cur = p_n(x), prev = p_{n-1}(x), p_n' = sqrt(2n) p_{n-1}
      if (pass < 2) x -= cur / (std::sqrt(2.0 * n) * prev);
    }
    rule.nodes[i] = x;
    rule.weights[i] = 1.0 / sum;
  }
  // enforce exact symmetry about zero
  for (int i = 0; i < n / 2; ++i) {
    const double x = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

double compensated_sum(const Eigen::VectorXd& v) {
  double sum = 0.0, c = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double t = sum + v[i];
    c += std::abs(sum) >= std::abs(v[i]) ? (sum - t) + v[i] : (v[i] - t) + sum;
    sum = t;
  }
  return sum + c;
}

Eigen::VectorXd stage1_contributions(const MarginalParams& theta, const LongitudinalDataset& data,
                                     const QuadratureRule& rule) {
  check_beta(theta, data);
  Eigen::VectorXd out(data.n_subjects());
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subjects[i];
    const Eigen::VectorXd eta0 = design_matrix(s) * theta.beta;
    out[i] = log_sum_exp(subject_log_f(s, eta0, theta, node_frame(s, eta0, theta, rule)));
    if (!std::isfinite(out[i])) throw EvaluationError(i, "non-finite stage-1 log-likelihood");
  }
  return out;
}

double stage1_loglik(const MarginalParams& theta, const LongitudinalDataset& data, const QuadratureRule& rule) {
  return compensated_sum(stage1_contributions(theta, data, rule));
}

// ---------------------------------------------------------------------------
// Stage 2

Stage2Workspace::Stage2Workspace(const MarginalParams& theta_hat, CopulaFamily family, std::optional<double> nu,
                                 const LongitudinalDataset& data, const QuadratureRule& rule)
    : theta_(theta_hat), family_(family), nu_(has_nu(family) ? nu : std::nullopt), rule_(rule) {
  check_beta(theta_hat, data);
  if (has_nu(family) && (!nu_ || !(*nu_ > 0.0))) {
    throw std::invalid_argument(to_string(family) + " copula requires nu > 0");
  }
  const bool plain = rule.mode == QuadratureMode::Plain;
  const Eigen::Index nk = rule.nodes.size();
  // Elliptical scores depend only on (u, nu): one quantile map serves all.
  if (!is_skew(family_)) elliptical_.emplace(family_, 0.0, nu_);

  subjects_.resize(data.subjects.size());
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& s = data.subjects[i];
    auto& c = subjects_[i];
    const auto it = std::find_if(patterns_.begin(), patterns_.end(), [&](const Eigen::VectorXd& t) {
      return t.size() == s.times.size() && t == s.times;
    });
    if (it == patterns_.end()) {
      patterns_.push_back(s.times);
      c.pattern = static_cast<int>(patterns_.size()) - 1;
    } else {
      c.pattern = static_cast<int>(it - patterns_.begin());
    }
    c.y = s.responses;
    c.eta0 = design_matrix(s) * theta_hat.beta;
    const NodeFrame frame = node_frame(s, c.eta0, theta_hat, rule);
    c.log_f = subject_log_f(s, c.eta0, theta_hat, frame);
    if (!c.log_f.allFinite()) throw EvaluationError(static_cast<int>(i), "non-finite marginal log-density");
    if (!plain) {
      const PosteriorMode pm = posterior_mode(s, c.eta0, theta_hat);
      c.mode = pm.mode;
      c.scale = 1.0 / std::sqrt(pm.curvature);
      continue;
    }
    const Eigen::Index n = s.responses.size();
    c.u.resize(n, nk);
    for (Eigen::Index k = 0; k < nk; ++k) {
      for (Eigen::Index j = 0; j < n; ++j) {
        c.u(j, k) = std::clamp(marginal_cdf(s.responses[j], c.eta0[j] + frame.b[k], theta_hat), kUniformClamp,
                               1.0 - kUniformClamp);
      }
    }
    if (elliptical_ && n > 1) {
      c.z = c.u.unaryExpr([&](double u) { return (*elliptical_)(u); });
    }
  }
}

double Stage2Workspace::log_integrand(const SubjectCache& c, const CopulaKernel& kernel, double b,
                                      Eigen::VectorXd& z) const {
  const double v = theta_.variance;
  double out = -0.5 * std::log(2.0 * std::numbers::pi * v) - b * b / (2.0 * v);
  for (Eigen::Index j = 0; j < c.y.size(); ++j) {
    const double eta = c.eta0[j] + b;
    out += marginal_logpdf(c.y[j], eta, theta_);
    const double u = std::clamp(marginal_cdf(c.y[j], eta, theta_), kUniformClamp, 1.0 - kUniformClamp);
    z[j] = elliptical_ ? (*elliptical_)(u) : kernel.score(static_cast<int>(j), u);
  }
  return out + kernel.logdensity_scores(z);
}

double Stage2Workspace::adaptive_contribution(const SubjectCache& c, const CopulaKernel& kernel) const {
  Eigen::VectorXd z(c.y.size());
  // Newton ascent on the full log integrand, run to convergence so the frame
  // is a smooth function of the copula parameters whatever path it took.
  double m = c.mode;
  const double delta = 0.05 * c.scale;
  const double s_lo = 0.25 * c.scale, s_hi = 4.0 * c.scale;
  double l0 = log_integrand(c, kernel, m, z);
  for (int iter = 0; iter < kModeIterations && std::isfinite(l0); ++iter) {
    const double lm = log_integrand(c, kernel, m - delta, z);
    const double lp = log_integrand(c, kernel, m + delta, z);
    const double g1 = (lp - lm) / (2.0 * delta);
    const double g2 = (lp - 2.0 * l0 + lm) / (delta * delta);
    if (!std::isfinite(g1) || !std::isfinite(g2)) break;
    double step = g2 < 0.0 ? -g1 / g2 : std::copysign(c.scale, g1);
    step = std::clamp(step, -2.0 * c.scale, 2.0 * c.scale);
    double l_new = log_integrand(c, kernel, m + step, z);
    // Only long steps must ascend. Short ones head for the zero of the
    // differenced slope, which sits slightly off the true maximum.
    if (std::abs(step) > 0.1 * c.scale) {
      for (int h = 0; h < 40 && !(l_new >= l0); ++h) {
        step *= 0.5;
        l_new = log_integrand(c, kernel, m + step, z);
      }
      if (!(l_new >= l0)) break;
    }
    m += step;
    l0 = l_new;
    if (std::abs(step) <= 1e-9 * c.scale) break;
  }
  const double lm = log_integrand(c, kernel, m - delta, z);
  const double lp = log_integrand(c, kernel, m + delta, z);
  const double g2 = (lp - 2.0 * l0 + lm) / (delta * delta);
  double s = c.scale;
  if (std::isfinite(g2)) s = 1.0 / std::sqrt(std::clamp(-g2, 1.0 / (s_hi * s_hi), 1.0 / (s_lo * s_lo)));
  const Eigen::Index nk = rule_.nodes.size();
  Eigen::VectorXd terms(nk);
  const double log_scale = std::log(std::numbers::sqrt2 * s);
  for (Eigen::Index k = 0; k < nk; ++k) {
    const double x = rule_.nodes[k];
    terms[k] = std::log(rule_.weights[k]) + x * x + log_scale +
               log_integrand(c, kernel, m + std::numbers::sqrt2 * s * x, z);
  }
  return log_sum_exp(terms);
}

Eigen::VectorXd Stage2Workspace::contributions(double xi, double lambda_bar) const {
  std::vector<std::optional<CopulaKernel>> kernels(patterns_.size());
  for (std::size_t p = 0; p < patterns_.size(); ++p) {
    const Eigen::Index d = patterns_[p].size();
    if (d < 2) continue;
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(d, is_skew(family_) ? lambda_bar : 0.0);
    kernels[p].emplace(family_, ar1_correlation(xi, patterns_[p]), lambda, nu_);
  }
  const bool plain = rule_.mode == QuadratureMode::Plain;
  Eigen::VectorXd out(subjects_.size());
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto& c = subjects_[i];
    const auto& kernel = kernels[c.pattern];
    if (!kernel) {
      out[i] = log_sum_exp(c.log_f);
    } else if (!plain) {
      out[i] = adaptive_contribution(c, *kernel);
    } else {
      Eigen::VectorXd terms = c.log_f;
      const Eigen::Index n = c.u.rows();
      Eigen::VectorXd z(n);
      for (Eigen::Index k = 0; k < terms.size(); ++k) {
        if (is_skew(family_)) {
          for (Eigen::Index j = 0; j < n; ++j) z[j] = kernel->score(static_cast<int>(j), c.u(j, k));
          terms[k] += kernel->logdensity_scores(z);
        } else {
          terms[k] += kernel->logdensity_scores(c.z.col(k));
        }
      }
      out[i] = log_sum_exp(terms);
    }
    if (!std::isfinite(out[i])) throw EvaluationError(static_cast<int>(i), "non-finite stage-2 log-likelihood");
  }
  return out;
}

Eigen::VectorXd stage2_contributions(const MarginalParams& theta_hat, const CopulaParams& phi, CopulaFamily family,
                                     const LongitudinalDataset& data, const QuadratureRule& rule) {
  return Stage2Workspace(theta_hat, family, phi.nu, data, rule).contributions(phi.xi, phi.lambda_bar);
}

double stage2_loglik(const MarginalParams& theta_hat, const CopulaParams& phi, CopulaFamily family,
                     const LongitudinalDataset& data, const QuadratureRule& rule) {
  return compensated_sum(stage2_contributions(theta_hat, phi, family, data, rule));
}

double full_loglik(const ModelParams& params, CopulaFamily family, const LongitudinalDataset& data,
                   const QuadratureRule& rule) {
  return stage2_loglik(params.theta, params.phi, family, data, rule);
}

}  // namespace copglmm
