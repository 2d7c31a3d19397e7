#include "copglmm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "copglmm/estimation.hpp"

namespace copglmm {

double aic(double loglik, int k) { return -2.0 * loglik + 2.0 * k; }

double bic(double loglik, int k, int m) { return -2.0 * loglik + std::log(static_cast<double>(m)) * k; }

int count_parameters(const ModelDescription& model) {
  return model.n_fixed_effects + 3 + (is_skew(model.copula) ? 1 : 0);
}

std::string model_label(MarginalFamily marginal, CopulaFamily copula, std::optional<int> nu) {
  std::string label = to_string(marginal) + "/" + to_string(copula);
  if (has_nu(copula) && nu) label += "(nu=" + std::to_string(*nu) + ")";
  return label;
}

ComparisonRow comparison_row(const FitResult& fit) {
  ComparisonRow row;
  row.marginal = fit.marginal;
  row.copula = fit.copula;
  row.nu = has_nu(fit.copula) ? fit.nu_selected : std::nullopt;
  row.label = model_label(row.marginal, row.copula, row.nu);
  row.loglik = fit.loglik;
  row.param_count = count_parameters({static_cast<int>(fit.params.theta.beta.size()), fit.marginal, fit.copula});
  row.aic = fit.aic;
  row.bic = fit.bic;
  row.n_subjects = fit.n_subjects;
  return row;
}

ModelComparison compare(std::vector<ComparisonRow> rows) {
  if (rows.empty()) throw std::invalid_argument("compare needs at least one fit");
  for (const auto& r : rows) {
    if (r.n_subjects != rows.front().n_subjects) {
      throw std::invalid_argument("fits were made on datasets with different subject counts (" +
                                  std::to_string(rows.front().n_subjects) + " vs " + std::to_string(r.n_subjects) +
                                  ")");
    }
  }
  auto by = [](auto key) {
    return [key](const ComparisonRow& a, const ComparisonRow& b) {
      const double ka = key(a), kb = key(b);
      if (ka != kb) return ka < kb;
      if (a.param_count != b.param_count) return a.param_count < b.param_count;
      return a.label < b.label;
    };
  };
  auto aic_less = by([](const ComparisonRow& r) { return r.aic; });
  auto bic_less = by([](const ComparisonRow& r) { return r.bic; });
  std::stable_sort(rows.begin(), rows.end(), aic_less);
  ModelComparison out;
  out.rows = std::move(rows);
  out.best_aic_index = 0;
  out.best_bic_index = static_cast<int>(std::min_element(out.rows.begin(), out.rows.end(), bic_less) - out.rows.begin());
  return out;
}

ModelComparison compare(const std::vector<FitResult>& fits) {
  std::vector<ComparisonRow> rows;
  rows.reserve(fits.size());
  for (const auto& f : fits) rows.push_back(comparison_row(f));
  return compare(std::move(rows));
}

}  // namespace copglmm
