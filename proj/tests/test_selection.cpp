#include <cmath>

#include "copglmm/selection.hpp"
#include "doctest.h"

using namespace copglmm;
using doctest::Approx;

namespace {

ComparisonRow row(MarginalFamily mf, CopulaFamily cf, double loglik, int p, int m, std::optional<int> nu = {}) {
  ComparisonRow r;
  r.marginal = mf;
  r.copula = cf;
  r.nu = nu;
  r.label = model_label(mf, cf, nu);
  r.loglik = loglik;
  r.param_count = count_parameters({p, mf, cf});
  r.aic = aic(loglik, r.param_count);
  r.bic = bic(loglik, r.param_count, m);
  r.n_subjects = m;
  return r;
}

}  // namespace

TEST_CASE("information criteria arithmetic") {
  CHECK(aic(-1250.84, 10) == Approx(2521.68).epsilon(1e-12));
  CHECK(std::abs(aic(-1250.84, 10) - 2521.67) <= 0.05);
  CHECK(std::abs(bic(-1250.84, 10, 261) - 2557.32) <= 0.05);
  CHECK(bic(-1250.84, 10, 261) == Approx(2501.68 + std::log(261.0) * 10));
  CHECK(aic(0, 1) == 2.0);
  CHECK(bic(0, 1, 1) == 0.0);
}

TEST_CASE("parameter counts") {
  CHECK(count_parameters({6, MarginalFamily::GammaLog, CopulaFamily::SkewT}) == 10);
  CHECK(count_parameters({6, MarginalFamily::GammaLog, CopulaFamily::Gaussian}) == 9);
  CHECK(count_parameters({6, MarginalFamily::NormalIdentity, CopulaFamily::StudentT}) == 9);
  CHECK(count_parameters({6, MarginalFamily::NormalIdentity, CopulaFamily::SkewNormal}) == 10);
  CHECK(count_parameters({1, MarginalFamily::NormalIdentity, CopulaFamily::Gaussian}) == 4);
}

TEST_CASE("comparison table") {
  SUBCASE("single fit is best by both") {
    const auto c = compare({row(MarginalFamily::GammaLog, CopulaFamily::SkewT, -100, 4, 50, 3)});
    CHECK(c.rows.size() == 1);
    CHECK(c.best_aic_index == 0);
    CHECK(c.best_bic_index == 0);
    CHECK(c.rows[0].label == "gamma/skewt(nu=3)");
  }
  SUBCASE("equal loglik: fewer parameters wins") {
    const auto c = compare({row(MarginalFamily::GammaLog, CopulaFamily::SkewNormal, -100, 6, 50),
                            row(MarginalFamily::GammaLog, CopulaFamily::Gaussian, -100, 6, 50)});
    CHECK(c.rows[c.best_aic_index].param_count == 9);
    CHECK(c.rows[c.best_bic_index].param_count == 9);
  }
  SUBCASE("exact ties fall back to label order") {
    ComparisonRow a = row(MarginalFamily::NormalIdentity, CopulaFamily::Gaussian, -100, 4, 50);
    ComparisonRow b = row(MarginalFamily::GammaLog, CopulaFamily::Gaussian, -100, 4, 50);
    const auto c = compare({a, b});
    CHECK(c.rows[0].label == "gamma/gaussian");
  }
  SUBCASE("invariants over a menu") {
    std::vector<ComparisonRow> rows;
    double ll = -500;
    for (auto mf : {MarginalFamily::GammaLog, MarginalFamily::NormalIdentity}) {
      for (auto cf : {CopulaFamily::Gaussian, CopulaFamily::StudentT, CopulaFamily::SkewNormal, CopulaFamily::SkewT}) {
        rows.push_back(row(mf, cf, ll, 6, 261, has_nu(cf) ? std::optional<int>(4) : std::nullopt));
        ll += 3.7;
      }
    }
    const auto c = compare(rows);
    for (std::size_t i = 0; i + 1 < c.rows.size(); ++i) CHECK(c.rows[i].aic <= c.rows[i + 1].aic);
    for (const auto& r : c.rows) {
      CHECK(r.bic >= r.aic);
      CHECK(c.rows[c.best_bic_index].bic <= r.bic);
    }
    // shifting every loglik leaves differences unchanged
    auto shifted = rows;
    for (auto& r : shifted) {
      r.loglik += 1234.5;
      r.aic = aic(r.loglik, r.param_count);
      r.bic = bic(r.loglik, r.param_count, r.n_subjects);
    }
    const auto c2 = compare(shifted);
    CHECK(c2.rows[0].label == c.rows[0].label);
    CHECK(c2.rows[c2.best_bic_index].label == c.rows[c.best_bic_index].label);
    CHECK((c2.rows[1].aic - c2.rows[0].aic) == Approx(c.rows[1].aic - c.rows[0].aic).epsilon(1e-9));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(compare(std::vector<ComparisonRow>{}), std::invalid_argument);
    CHECK_THROWS_AS(compare({row(MarginalFamily::GammaLog, CopulaFamily::Gaussian, -1, 4, 50),
                             row(MarginalFamily::GammaLog, CopulaFamily::Gaussian, -1, 4, 51)}),
                    std::invalid_argument);
  }
}
