#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copglmm/copulas.hpp"
#include "copglmm/dataset.hpp"
#include "copglmm/marginals.hpp"

namespace copglmm {

enum class QuadratureMode {
  /// Nodes centred at each subject's posterior mode of b and scaled by the
  /// posterior curvature.
  Adaptive,
  /// b = sqrt(2 V) x for every subject.
  Plain
};

/// Gauss-Hermite rule for the weight exp(-x^2).
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
  QuadratureMode mode = QuadratureMode::Adaptive;
};

/// Posterior mode of b and the curvature -d2/db2 of the log posterior there.
struct PosteriorMode {
  double mode = 0.0;
  double curvature = 0.0;
};

/// argmax_b sum_j log f(y_j | eta0_j + b) - b^2 / (2V), safeguarded Newton.
PosteriorMode posterior_mode(const Subject& s, const Eigen::VectorXd& eta0, const MarginalParams& theta);

/// Random-effect values b_k and log weights (log of w_k g(b_k) db / dx) for
/// one subject, so that int h(b) g(b) db ~ sum_k exp(log_w_k) h(b_k).
struct NodeFrame {
  Eigen::VectorXd b;
  Eigen::VectorXd log_w;
};
NodeFrame node_frame(const Subject& s, const Eigen::VectorXd& eta0, const MarginalParams& theta,
                     const QuadratureRule& rule);

struct ModelParams {
  MarginalParams theta;
  CopulaParams phi;
};

/// Non-finite likelihood contribution; carries the subject index.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(int subject, const std::string& what)
      : std::runtime_error("subject " + std::to_string(subject) + ": " + what), subject_(subject) {}
  int subject() const { return subject_; }

 private:
  int subject_;
};

/// Golub-Welsch rule with 1 <= n <= 100 nodes.
QuadratureRule gauss_hermite(int n, QuadratureMode mode = QuadratureMode::Adaptive);

/// Per-subject stage-1 contributions log int prod_j f(y_ij | b) g(b) db.
Eigen::VectorXd stage1_contributions(const MarginalParams& theta, const LongitudinalDataset& data,
                                     const QuadratureRule& rule);
double stage1_loglik(const MarginalParams& theta, const LongitudinalDataset& data, const QuadratureRule& rule);

Eigen::VectorXd stage2_contributions(const MarginalParams& theta_hat, const CopulaParams& phi, CopulaFamily family,
                                     const LongitudinalDataset& data, const QuadratureRule& rule);
double stage2_loglik(const MarginalParams& theta_hat, const CopulaParams& phi, CopulaFamily family,
                     const LongitudinalDataset& data, const QuadratureRule& rule);

/// Same computation as stage2_loglik with (theta, phi) supplied together.
double full_loglik(const ModelParams& params, CopulaFamily family, const LongitudinalDataset& data,
                   const QuadratureRule& rule);

/// Neumaier-compensated sum.
double compensated_sum(const Eigen::VectorXd& v);

/// Stage-2 evaluator with everything that depends only on theta_hat cached.
/// Under plain quadrature the nodes are fixed, so the marginal CDF values and
/// log densities at every (subject, node) are stored, plus normal/t scores
/// for elliptical families. Under adaptive quadrature the frame is recentred
/// on the full stage-2 integrand at each call, starting from the stage-1
/// posterior mode.
class Stage2Workspace {
 public:
  Stage2Workspace(const MarginalParams& theta_hat, CopulaFamily family, std::optional<double> nu,
                  const LongitudinalDataset& data, const QuadratureRule& rule);

  Eigen::VectorXd contributions(double xi, double lambda_bar) const;
  double loglik(double xi, double lambda_bar) const { return compensated_sum(contributions(xi, lambda_bar)); }

  int n_subjects() const { return static_cast<int>(subjects_.size()); }
  CopulaFamily family() const { return family_; }
  std::optional<double> nu() const { return nu_; }

 private:
  struct SubjectCache {
    int pattern = 0;
    Eigen::VectorXd y, eta0;
    double mode = 0.0, scale = 1.0;  // stage-1 posterior frame (adaptive)
    Eigen::MatrixXd u;               // n_i x K marginal CDF values (plain)
    Eigen::MatrixXd z;               // n_i x K elliptical scores (plain)
    Eigen::VectorXd log_f;           // K: log weight + sum_j log f(y_ij | b_k) (plain)
  };

  double log_integrand(const SubjectCache& c, const CopulaKernel& kernel, double b, Eigen::VectorXd& z) const;
  double adaptive_contribution(const SubjectCache& c, const CopulaKernel& kernel) const;

  MarginalParams theta_;
  CopulaFamily family_;
  std::optional<double> nu_;
  QuadratureRule rule_;
  std::optional<QuantileMap> elliptical_;
  std::vector<Eigen::VectorXd> patterns_;  // distinct time vectors
  std::vector<SubjectCache> subjects_;
};

}  // namespace copglmm
