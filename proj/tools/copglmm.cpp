#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "copglmm/io.hpp"

using namespace copglmm;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFitFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<int> parse_nu_grid(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw UsageError("--nu-grid expects A..B, got '" + text + "'");
  int a = 0, b = 0;
  try {
    std::size_t pa = 0, pb = 0;
    a = std::stoi(text.substr(0, dots), &pa);
    b = std::stoi(text.substr(dots + 2), &pb);
    if (pa != dots || pb != text.size() - dots - 2) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw UsageError("--nu-grid expects integer bounds A..B, got '" + text + "'");
  }
  if (a < 1 || b < a) throw UsageError("--nu-grid needs 1 <= A <= B");
  std::vector<int> grid;
  for (int v = a; v <= b; ++v) grid.push_back(v);
  return grid;
}

// column=token:value,token:value
std::pair<std::string, std::map<std::string, double>> parse_recode(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--recode expects column=token:value,...");
  std::map<std::string, double> map;
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0) throw UsageError("--recode entry '" + item + "' is not token:value");
    try {
      std::size_t used = 0;
      const std::string v = item.substr(colon + 1);
      map[item.substr(0, colon)] = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw UsageError("--recode value in '" + item + "' is not a number");
    }
  }
  if (map.empty()) throw UsageError("--recode for '" + text.substr(0, eq) + "' has no entries");
  return {text.substr(0, eq), map};
}

void print_fit(const FitResult& fit) {
  std::printf("%-12s %14s %14s\n", "parameter", "estimate", "se");
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    std::printf("%-12s %14.6g %14.6g\n", fit.names[k].c_str(), fit.estimates[k], fit.std_errors[k]);
  }
  if (!fit.nu_table.empty()) {
    std::printf("\nnu     loglik\n");
    for (const auto& [nu, ll] : fit.nu_table) std::printf("%-6d %.4f\n", nu, ll);
  }
  std::printf("\nloglik %.4f  AIC %.4f  BIC %.4f  (%s)\n", fit.loglik, fit.aic, fit.bic,
              to_string(fit.convergence).c_str());
  for (const auto& w : fit.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

struct FitArgs {
  std::string data, marginal = "gamma", copula = "gaussian", out = "fit_output", expect, impute = "locf";
  std::optional<double> nu;
  std::string nu_grid;
  int quad_points = 15;
  std::uint64_t seed = 0;
  double scale = 1.0, time_offset = 0.0, time_divisor = 1.0;
  std::vector<std::string> drop, recode;
  bool modes = false;
};

int run_fit(const FitArgs& a) {
  PreprocessSpec spec;
  spec.response_scale = a.scale;
  spec.time_offset = a.time_offset;
  spec.time_divisor = a.time_divisor;
  spec.impute = a.impute == "none" ? Impute::None : Impute::Locf;
  spec.drop_columns = a.drop;
  for (const auto& r : a.recode) spec.recode.insert(parse_recode(r));

  FitOptions o;
  try {
    o.marginal = parse_marginal_family(a.marginal);
    o.copula = parse_copula_family(a.copula);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  o.nu = a.nu;
  if (!a.nu_grid.empty()) o.nu_grid = parse_nu_grid(a.nu_grid);
  if (has_nu(o.copula) && !o.nu && o.nu_grid.empty()) throw UsageError("the " + a.copula + " copula needs --nu or --nu-grid");
  if (a.quad_points < 2 || a.quad_points > 200) throw UsageError("--quad-points must be in [2, 200]");
  o.quad_points = a.quad_points;

  IngestReport report;
  const LongitudinalDataset data = ingest_csv(fs::path(a.data), spec, &report);
  std::fprintf(stderr, "ingest: %s\n", to_string(report).c_str());

  std::optional<std::vector<ExpectedValue>> expected;
  if (!a.expect.empty()) {
    try {
      expected = expected_values(a.expect, o.marginal, o.copula);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }

  const FitResult fit = fit_model(data, o);
  print_fit(fit);
  const fs::path dir(a.out);
  write_file_atomic(dir / "fit.json", fit_report_json(fit, data));
  write_file_atomic(dir / "estimates.csv", estimates_csv(fit));
  if (!fit.nu_table.empty()) write_file_atomic(dir / "nu_table.csv", nu_table_csv(fit));
  if (a.modes) write_file_atomic(dir / "posterior_modes.csv", posterior_modes_csv(fit, data));
  std::fprintf(stderr, "wrote %s\n", (dir / "fit.json").c_str());

  int code = kOk;
  if (fit.convergence != ConvergenceStatus::Converged) {
    std::fprintf(stderr, "error: fit did not converge (%s)\n", to_string(fit.convergence).c_str());
    code = kFitFailure;
  }
  if (!fit.std_errors.allFinite()) {
    std::fprintf(stderr, "error: standard errors unavailable\n");
    code = kFitFailure;
  }
  if (expected) {
    std::printf("\n%-12s %12s %12s %12s  result\n", "quantity", "expected", "actual", "tolerance");
    for (const auto& c : check_expectations(fit, *expected)) {
      std::printf("%-12s %12.6g %12.6g %12.6g  %s\n", c.name.c_str(), c.expected, c.actual, c.tolerance,
                  c.pass ? "ok" : "MISMATCH");
      if (!c.pass) code = kFitFailure;
    }
  }
  return code;
}

struct SimArgs {
  std::string config, out = "simulation_output";
  std::optional<int> replications, threads;
  std::optional<std::uint64_t> seed;
  int quad_points = 15;
};

ScenarioConfig scenario_from(const SimArgs& a) {
  ScenarioConfig cfg = load_scenario(a.config);
  if (a.replications) cfg.replications = *a.replications;
  if (a.seed) cfg.seed = *a.seed;
  validate(cfg);
  return cfg;
}

int run_simulate(const SimArgs& a) {
  const ScenarioConfig cfg = scenario_from(a);
  McOptions mc;
  mc.quad_points = a.quad_points;
  mc.threads = a.threads.value_or(1);
  std::fprintf(stderr, "scenario %s: m=%d, N=%d, seed=%llu\n", cfg.name.c_str(), cfg.m, cfg.replications,
               static_cast<unsigned long long>(cfg.seed));
  McSummary s;
  try {
    s = run_monte_carlo(cfg, mc);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFitFailure;
  }
  const std::string csv = summary_csv(s);
  std::fputs(csv.c_str(), stdout);
  const fs::path dir(a.out);
  write_file_atomic(dir / "summary.csv", csv);
  write_file_atomic(dir / "summary.json", summary_json(s, cfg));
  if (s.failures > 0) std::fprintf(stderr, "%d of %d replications failed and were excluded\n", s.failures, s.replications);
  return kOk;
}

int run_generate(const std::string& config, const std::string& out, int rep, std::optional<std::uint64_t> seed) {
  SimArgs a;
  a.config = config;
  a.seed = seed;
  const ScenarioConfig cfg = scenario_from(a);
  auto rng = replication_rng(cfg.seed, rep);
  write_file_atomic(out, dataset_csv(generate_dataset(cfg, rng)));
  return kOk;
}

int run_compare(const std::vector<std::string>& files, const std::string& out) {
  if (files.empty()) throw UsageError("compare needs at least one fit report");
  std::vector<ComparisonRow> rows;
  for (const auto& f : files) rows.push_back(comparison_row_from_json(read_file(f)));
  ModelComparison c;
  try {
    c = compare(rows);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::printf("%-24s %12s %4s %12s %12s\n", "model", "loglik", "k", "AIC", "BIC");
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    const auto& r = c.rows[i];
    std::printf("%-24s %12.4f %4d %12.4f %12.4f%s%s\n", r.label.c_str(), r.loglik, r.param_count, r.aic, r.bic,
                static_cast<int>(i) == c.best_aic_index ? "  *AIC" : "",
                static_cast<int>(i) == c.best_bic_index ? "  *BIC" : "");
  }
  if (!out.empty()) write_file_atomic(out, comparison_csv(c));
  return kOk;
}

struct GridArgs {
  std::string copula = "gaussian", out = "grid.csv";
  std::optional<double> rho, xi, nu;
  std::vector<double> lambda{0.0, 0.0};
  int points = 101;
  double lo = -3.0, hi = 3.0;
};

int run_gridplot(const GridArgs& a) {
  GridSpec g;
  try {
    g.family = parse_copula_family(a.copula);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.rho && a.xi) throw UsageError("give either --rho or --xi");
  g.rho = a.xi ? std::exp(-*a.xi) : a.rho.value_or(0.0);
  if (a.lambda.size() != 2) throw UsageError("--lambda takes two values");
  g.lambda = Eigen::Vector2d(a.lambda[0], a.lambda[1]);
  g.nu = a.nu;
  if (has_nu(g.family) && !g.nu) throw UsageError("the " + a.copula + " copula needs --nu");
  g.points = a.points;
  g.lo = a.lo;
  g.hi = a.hi;
  Eigen::MatrixXd grid;
  try {
    grid = density_grid(g);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  write_file_atomic(a.out, grid_csv(g, grid));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Copula-based generalized linear mixed models for longitudinal data"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit one marginal/copula model to a long-format CSV");
  fit->add_option("--data", fa.data, "CSV with subject_id,time,response,<covariates>")->required()->check(CLI::ExistingFile);
  fit->add_option("--marginal", fa.marginal, "gamma | normal")->capture_default_str();
  fit->add_option("--copula", fa.copula, "gaussian | t | skewnormal | skewt")->capture_default_str();
  auto* nu_opt = fit->add_option("--nu", fa.nu, "Fixed degrees of freedom for t-type copulas");
  fit->add_option("--nu-grid", fa.nu_grid, "Integer grid A..B searched by maximum likelihood")->excludes(nu_opt);
  fit->add_option("--quad-points", fa.quad_points, "Gauss-Hermite points")->capture_default_str();
  fit->add_option("--seed", fa.seed, "Accepted for interface symmetry; fitting draws no random numbers");
  fit->add_option("--out", fa.out, "Output directory")->capture_default_str();
  fit->add_option("--scale", fa.scale, "Divide responses by this")->capture_default_str();
  fit->add_option("--time-offset", fa.time_offset, "time = (raw - offset) / divisor")->capture_default_str();
  fit->add_option("--time-divisor", fa.time_divisor)->capture_default_str();
  fit->add_option("--impute", fa.impute, "locf | none")->check(CLI::IsMember({"locf", "none"}))->capture_default_str();
  fit->add_option("--drop", fa.drop, "Covariate columns to ignore")->delimiter(',');
  fit->add_option("--recode", fa.recode, "column=token:value,... (repeatable)");
  fit->add_flag("--posterior-modes", fa.modes, "Also write per-subject random-intercept modes");
  fit->add_option("--expect", fa.expect, "Check the fit against a reference table (hiv)");

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study from a scenario config");
  sim->add_option("--config", sa.config, "YAML or JSON scenario")->required();
  sim->add_option("--replications", sa.replications);
  sim->add_option("--seed", sa.seed);
  sim->add_option("--threads", sa.threads)->check(CLI::PositiveNumber);
  sim->add_option("--quad-points", sa.quad_points)->capture_default_str();
  sim->add_option("--out", sa.out, "Output directory")->capture_default_str();

  std::string gen_config, gen_out = "data.csv";
  int gen_rep = 0;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("generate", "Write one simulated dataset as CSV");
  gen->add_option("--config", gen_config)->required();
  gen->add_option("--out", gen_out)->capture_default_str();
  gen->add_option("--replication", gen_rep)->check(CLI::NonNegativeNumber)->capture_default_str();
  gen->add_option("--seed", gen_seed);

  std::vector<std::string> cmp_files;
  std::string cmp_out;
  auto* cmp = app.add_subcommand("compare", "AIC/BIC table from fit reports");
  cmp->add_option("files", cmp_files, "fit.json files");
  cmp->add_option("--out", cmp_out, "Write the table as CSV");

  GridArgs ga;
  auto* grid = app.add_subcommand("gridplot", "Bivariate copula density with standard normal margins");
  grid->add_option("--copula", ga.copula)->capture_default_str();
  grid->add_option("--rho", ga.rho, "Correlation");
  grid->add_option("--xi", ga.xi, "AR(1) rate; rho = exp(-xi) at lag 1");
  grid->add_option("--lambda", ga.lambda, "Two skewness values")->expected(2)->delimiter(',');
  grid->add_option("--nu", ga.nu);
  grid->add_option("--points", ga.points)->check(CLI::Range(2, 2001))->capture_default_str();
  grid->add_option("--lo", ga.lo)->capture_default_str();
  grid->add_option("--hi", ga.hi)->capture_default_str();
  grid->add_option("--out", ga.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*fit) return run_fit(fa);
    if (*sim) return run_simulate(sa);
    if (*gen) return run_generate(gen_config, gen_out, gen_rep, gen_seed);
    if (*cmp) return run_compare(cmp_files, cmp_out);
    if (*grid) return run_gridplot(ga);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFitFailure;
  }
  return kUsage;
}
