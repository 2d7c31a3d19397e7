#include "copglmm/dataset.hpp"

#include <stdexcept>

namespace copglmm {

int LongitudinalDataset::n_observations() const {
  int n = 0;
  for (const auto& s : subjects) n += s.size();
  return n;
}

Eigen::MatrixXd design_matrix(const Subject& s) {
  const Eigen::Index n = s.times.size(), q = s.covariates.cols();
  Eigen::MatrixXd x(n, q + 2);
  x.col(0).setOnes();
  if (q > 0) x.middleCols(1, q) = s.covariates;
  x.col(q + 1) = s.times;
  return x;
}

int n_fixed_effects(const LongitudinalDataset& data) { return data.n_covariates() + 2; }

std::vector<std::string> fixed_effect_names(const LongitudinalDataset& data) {
  std::vector<std::string> names;
  for (int k = 0; k < n_fixed_effects(data); ++k) names.push_back("beta" + std::to_string(k));
  return names;
}

void validate(const LongitudinalDataset& data) {
  if (data.subjects.empty()) throw std::invalid_argument("dataset has no subjects");
  const Eigen::Index q = data.n_covariates();
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& s = data.subjects[i];
    const std::string where = "subject " + s.id + " (index " + std::to_string(i) + ")";
    if (s.responses.size() == 0) throw std::invalid_argument(where + " has no observations");
    if (s.times.size() != s.responses.size() || s.covariates.rows() != s.responses.size() ||
        s.covariates.cols() != q) {
      throw std::invalid_argument(where + " has misaligned times/responses/covariates");
    }
    if (!s.responses.allFinite() || !s.times.allFinite() || !s.covariates.allFinite()) {
      throw std::invalid_argument(where + " contains non-finite values");
    }
    for (Eigen::Index j = 1; j < s.times.size(); ++j) {
      if (!(s.times[j] > s.times[j - 1])) throw std::invalid_argument(where + " times are not strictly increasing");
    }
  }
}

}  // namespace copglmm
