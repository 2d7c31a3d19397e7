#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copglmm/copulas.hpp"
#include "copglmm/dataset.hpp"
#include "copglmm/estimation.hpp"
#include "copglmm/selection.hpp"
#include "copglmm/simulation.hpp"

namespace copglmm {

inline constexpr int kReportSchemaVersion = 1;

/// Malformed input file; line() is 1-based, 0 when not tied to a line.
class InputError : public std::runtime_error {
 public:
  InputError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

enum class Impute { Locf, None };

struct PreprocessSpec {
  /// Responses are divided by this.
  double response_scale = 1.0;
  /// time = (raw - time_offset) / time_divisor
  double time_offset = 0.0;
  double time_divisor = 1.0;
  Impute impute = Impute::Locf;
  std::vector<std::string> drop_columns;
  /// column -> (raw token -> numeric value); applied before numeric parsing.
  std::map<std::string, std::map<std::string, double>> recode;
};

struct IngestReport {
  int rows_read = 0;
  int imputed = 0;
  int dropped = 0;
  int subjects = 0;
  std::vector<std::string> notes;
};

std::string to_string(const IngestReport& r);

/// Long-format CSV: subject_id,time,response,<covariates...>. `NA` or an
/// empty field marks a missing response. Subjects are ordered by id
/// (numerically when every id is an integer), rows by time.
LongitudinalDataset ingest_csv(std::istream& in, const PreprocessSpec& spec, IngestReport* report = nullptr);
LongitudinalDataset ingest_csv(const std::filesystem::path& path, const PreprocessSpec& spec,
                               IngestReport* report = nullptr);

/// Inverse of ingest_csv with the identity PreprocessSpec.
std::string dataset_csv(const LongitudinalDataset& data);

/// Shortest representation that parses back to the same double; "NaN" and
/// "Inf" spelled out.
std::string format_double(double v);

/// Writes to a sibling temporary file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// Fit reports ---------------------------------------------------------------

std::string fit_report_json(const FitResult& fit, const LongitudinalDataset& data);
/// Fields needed for model comparison; throws InputError on schema problems.
ComparisonRow comparison_row_from_json(const std::string& text);

/// parameter,estimate,se
std::string estimates_csv(const FitResult& fit);
/// nu,loglik (empty table when no grid was searched)
std::string nu_table_csv(const FitResult& fit);
/// subject_id,b_mode
std::string posterior_modes_csv(const FitResult& fit, const LongitudinalDataset& data);

/// label,marginal,copula,nu,loglik,param_count,aic,bic,best_aic,best_bic
std::string comparison_csv(const ModelComparison& c);

// Scenario configs ----------------------------------------------------------

/// YAML (and therefore JSON). Keys: name, m, n_per_subject, replications,
/// seed, marginal {family, beta, variance, kappa | sigma},
/// copula {family, xi, lambda_bar, nu}. Errors are ConfigError with a
/// dotted field path.
ScenarioConfig parse_scenario(const std::string& text);
ScenarioConfig load_scenario(const std::filesystem::path& path);
std::string scenario_yaml(const ScenarioConfig& cfg);

std::string summary_json(const McSummary& summary, const ScenarioConfig& cfg);

// Bivariate density grids ---------------------------------------------------

struct GridSpec {
  CopulaFamily family = CopulaFamily::Gaussian;
  double rho = 0.0;
  Eigen::Vector2d lambda = Eigen::Vector2d::Zero();
  std::optional<double> nu;
  int points = 101;
  double lo = -3.0;
  double hi = 3.0;
};

/// points x points matrix of c(Phi(z1), Phi(z2)) phi(z1) phi(z2); row index
/// follows z1, column index z2.
Eigen::MatrixXd density_grid(const GridSpec& spec);
Eigen::VectorXd grid_axis(const GridSpec& spec);
/// z1,z2,density
std::string grid_csv(const GridSpec& spec, const Eigen::MatrixXd& grid);

// Reference comparisons -----------------------------------------------------

struct ExpectedValue {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
};

struct ExpectationCheck {
  std::string name;
  double expected = 0.0;
  double actual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Reference values for the CD4 analysis (covariates gender, age, fbr,
/// weight; t = (week - 18)/12; counts / 100), keyed by "hiv".
std::vector<ExpectedValue> expected_values(const std::string& key, MarginalFamily marginal, CopulaFamily copula);
std::vector<ExpectationCheck> check_expectations(const FitResult& fit, const std::vector<ExpectedValue>& expected);

}  // namespace copglmm
