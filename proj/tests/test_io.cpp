#include <cmath>
#include <filesystem>
#include <sstream>

#include "copglmm/distributions.hpp"
#include "copglmm/io.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace copglmm;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

LongitudinalDataset ingest_text(const std::string& text, const PreprocessSpec& spec = {}, IngestReport* rep = nullptr) {
  std::istringstream in(text);
  return ingest_csv(in, spec, rep);
}

FitResult fake_fit() {
  FitResult f;
  f.marginal = MarginalFamily::GammaLog;
  f.copula = CopulaFamily::SkewT;
  f.params.theta.family = MarginalFamily::GammaLog;
  f.params.theta.beta = Eigen::Vector2d(0.1, 0.2);
  f.params.phi.nu = 3.0;
  f.names = {"beta0", "beta1", "V", "kappa", "xi", "lambda_bar"};
  f.estimates.resize(6);
  f.estimates << 0.1, 1.0 / 3.0, 0.07, 5.0979, 0.1781, 1.2765;
  f.std_errors = Eigen::VectorXd::Constant(6, 0.01);
  f.std_errors[5] = std::numeric_limits<double>::quiet_NaN();
  f.mean_score = Eigen::VectorXd::Zero(6);
  f.loglik = -1250.84;
  f.aic = aic(f.loglik, 6);
  f.bic = bic(f.loglik, 6, 261);
  f.n_subjects = 261;
  f.nu_table = {{3, -1250.84}, {4, -1261.45}};
  f.convergence = ConvergenceStatus::Converged;
  return f;
}

}  // namespace

TEST_CASE("ingest: preprocessing steps") {
  const std::string csv =
      "subject_id,time,response,gender,fbr\n"
      "2,42,390,1,5\n"
      "1,18,410,0,1\n"
      "1,30,NA,0,1\n"
      "1,42,390,0,1\n"
      "2,18,NA,1,5\n"
      "2,30,412,1,5\n"
      "10,18,100,0,2\n";
  PreprocessSpec spec;
  spec.response_scale = 100;
  spec.time_offset = 18;
  spec.time_divisor = 12;
  IngestReport rep;
  const auto d = ingest_text(csv, spec, &rep);
  REQUIRE(d.n_subjects() == 3);
  CHECK(d.subjects[0].id == "1");
  CHECK(d.subjects[1].id == "2");
  CHECK(d.subjects[2].id == "10");
  CHECK(d.subjects[0].responses == Eigen::Vector3d(4.1, 4.1, 3.9));
  CHECK(d.subjects[0].times == Eigen::Vector3d(0, 1, 2));
  // leading missing row dropped
  CHECK(d.subjects[1].times == Eigen::Vector2d(1, 2));
  CHECK(d.subjects[1].responses[0] == Approx(4.12).epsilon(1e-15));
  CHECK(rep.rows_read == 7);
  CHECK(rep.imputed == 1);
  CHECK(rep.dropped == 1);
  CHECK(d.covariate_names == std::vector<std::string>{"gender", "fbr"});

  SUBCASE("week transform") {
    const auto w = ingest_text("subject_id,time,response\na,18,1\na,30,1\na,42,1\na,54,1\n", spec);
    CHECK(w.subjects[0].times == Eigen::Vector4d(0, 1, 2, 3));
  }
  SUBCASE("no imputation drops missing rows") {
    spec.impute = Impute::None;
    const auto n = ingest_text(csv, spec);
    CHECK(n.subjects[0].size() == 2);
  }
  SUBCASE("drop and recode") {
    spec.drop_columns = {"gender"};
    spec.recode["fbr"] = {{"1", 0.0}, {"2", 1.0}, {"5", 2.0}};
    const auto r = ingest_text(csv, spec);
    CHECK(r.covariate_names == std::vector<std::string>{"fbr"});
    CHECK(r.subjects[1].covariates(0, 0) == 2.0);
    CHECK(r.subjects[2].covariates(0, 0) == 1.0);
  }
}

TEST_CASE("ingest: errors") {
  CHECK_THROWS_AS(ingest_text("id,time,response\n1,0,1\n"), InputError);
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n1,0\n"), InputError);
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n1,zero,1\n"), InputError);
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n1,0,NA\n"), InputError);
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n1,0,1\n1,0,2\n"), InputError);
  CHECK_THROWS_AS(ingest_text("subject_id,time,response,x\n1,0,1,NA\n"), InputError);
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n"), InputError);
  PreprocessSpec bad;
  bad.response_scale = 0;
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n1,0,1\n", bad), std::invalid_argument);
  PreprocessSpec drop;
  drop.drop_columns = {"missing"};
  CHECK_THROWS_AS(ingest_text("subject_id,time,response\n1,0,1\n", drop), InputError);
  try {
    ingest_text("subject_id,time,response\n1,0,1\n1,1,x\n");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("dataset serialisation round trip is bit-identical") {
  LongitudinalDataset d;
  d.covariate_names = {"age", "w,eight"};
  Subject s;
  s.id = "p\"1";
  s.times = Eigen::Vector3d(-1.0 / 3.0, 0.1, 2.0);
  s.responses = Eigen::Vector3d(4.12, 1e-300, 3.0 / 7.0);
  s.covariates.resize(3, 2);
  s.covariates << 31, 0.1 + 0.2, 31, 0.3, 31, 1e10 / 3;
  d.subjects.push_back(s);
  const std::string text = dataset_csv(d);
  const auto back = ingest_text(text);
  CHECK(back.covariate_names == d.covariate_names);
  CHECK(back.subjects[0].id == s.id);
  CHECK(back.subjects[0].times == s.times);
  CHECK(back.subjects[0].responses == s.responses);
  CHECK(back.subjects[0].covariates == s.covariates);
  CHECK(dataset_csv(back) == text);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(std::nan("")) == "NaN");
}

TEST_CASE("fit report JSON") {
  const FitResult f = fake_fit();
  LongitudinalDataset d;
  const std::string text = fit_report_json(f, d);
  const auto j = nlohmann::json::parse(text);
  CHECK(j["schema_version"] == kReportSchemaVersion);
  CHECK(j["model"] == "gamma/skewt(nu=3)");
  CHECK(j["nu"] == 3);
  CHECK(j["estimates"]["beta1"]["value"].get<double>() == 1.0 / 3.0);
  CHECK(j["estimates"]["lambda_bar"]["se"].is_null());
  CHECK(j["nu_table"].size() == 2);
  for (const char* key : {"model", "marginal", "copula", "nu", "estimates", "loglik", "aic", "bic", "convergence",
                          "n_subjects"}) {
    CHECK(j.contains(key));
  }
  // seventeen significant digits in the text
  CHECK(text.find("0.33333333333333331") != std::string::npos);

  const ComparisonRow r = comparison_row_from_json(text);
  CHECK(r.label == "gamma/skewt(nu=3)");
  CHECK(r.param_count == 6);
  CHECK(r.aic == f.aic);
  CHECK(r.n_subjects == 261);
  CHECK_THROWS_AS(comparison_row_from_json("{"), InputError);
  CHECK_THROWS_AS(comparison_row_from_json("{\"schema_version\": 99}"), InputError);

  CHECK(estimates_csv(f).rfind("parameter,estimate,se\nbeta0,", 0) == 0);
  CHECK(nu_table_csv(f) == "nu,loglik\n3,-1250.8399999999999\n4,-1261.45\n");
}

TEST_CASE("expected reference values") {
  const auto e = expected_values("hiv", MarginalFamily::GammaLog, CopulaFamily::SkewT);
  CHECK(e.size() == 14);
  FitResult f = fake_fit();
  const auto checks = check_expectations(f, e);
  for (const auto& c : checks) {
    if (c.name == "xi" || c.name == "lambda_bar" || c.name == "kappa" || c.name == "loglik" || c.name == "nu") {
      CHECK_MESSAGE(c.pass, c.name);
    }
    if (c.name == "beta5") CHECK(!c.pass);
  }
  CHECK_THROWS(expected_values("other", MarginalFamily::GammaLog, CopulaFamily::Gaussian));
}

TEST_CASE("scenario configs") {
  const std::string yaml = R"(name: t1
m: 200
replications: 50
seed: 7
marginal:
  family: gamma
  beta: [1.5, 0.5, 0.5, 1.0]
  variance: 1
  kappa: 3
copula:
  family: skewt
  xi: 0.25
  lambda_bar: 1
  nu: 3
)";
  const ScenarioConfig a = parse_scenario(yaml);
  CHECK(a.name == "t1");
  CHECK(a.seed == 7);
  CHECK(a.copula == CopulaFamily::SkewT);
  CHECK(*a.phi.nu == 3.0);
  CHECK(a.theta.shape_or_sd == 3.0);

  const std::string json = R"({"name": "t1", "m": 200, "replications": 50, "seed": 7,
    "marginal": {"family": "gamma", "beta": [1.5, 0.5, 0.5, 1.0], "variance": 1, "kappa": 3},
    "copula": {"family": "skewt", "xi": 0.25, "lambda_bar": 1, "nu": 3}})";
  const ScenarioConfig b = parse_scenario(json);
  CHECK(scenario_yaml(a) == scenario_yaml(b));
  const ScenarioConfig c = parse_scenario(scenario_yaml(a));
  CHECK(scenario_yaml(c) == scenario_yaml(a));

  auto field_of = [](const std::string& text) {
    try {
      parse_scenario(text);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  const std::string base = "marginal: {family: normal}\ncopula: {family: gaussian}\n";
  CHECK(field_of(base) == "<none>");
  CHECK(field_of("m: 0\n" + base) == "m");
  CHECK(field_of("m: many\n" + base) == "m");
  CHECK(field_of("colour: red\n" + base) == "colour");
  CHECK(field_of("marginal: {family: normal, kappa: 2}\ncopula: {family: gaussian}\n") == "marginal.kappa");
  CHECK(field_of("marginal: {family: normal}\ncopula: {family: gaussian, nu: 4}\n") == "copula.nu");
  CHECK(field_of("marginal: {family: poisson}\ncopula: {family: gaussian}\n") == "marginal.family");
  CHECK(field_of("copula: {family: gaussian}\n") == "marginal");
  CHECK(field_of("marginal: {family: normal, beta: [1, 2]}\ncopula: {family: gaussian}\n") == "beta");
  CHECK(field_of("[1, 2") == "config");
}

TEST_CASE("density grids") {
  GridSpec g;
  const Eigen::VectorXd z = grid_axis(g);
  CHECK(z.size() == 101);
  CHECK(z[50] == Approx(0.0));
  SUBCASE("independence is the product of normal densities") {
    const Eigen::MatrixXd m = density_grid(g);
    double worst = 0.0;
    for (int a = 0; a < 101; ++a) {
      for (int b = 0; b < 101; ++b) worst = std::max(worst, std::abs(m(a, b) - norm_pdf(z[a]) * norm_pdf(z[b])));
    }
    CHECK(worst <= 1e-10);
  }
  SUBCASE("skew-normal with zero skewness nests the Gaussian") {
    g.rho = std::exp(-0.25);
    const Eigen::MatrixXd gauss = density_grid(g);
    g.family = CopulaFamily::SkewNormal;
    const Eigen::MatrixXd sn = density_grid(g);
    CHECK((gauss - sn).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SUBCASE("skew-t grid integrates to one") {
    g.family = CopulaFamily::SkewT;
    g.rho = 0.77;
    g.nu = 5.0;
    g.lambda = Eigen::Vector2d(1, 1);
    g.lo = -8;
    g.hi = 8;
    g.points = 321;
    const Eigen::MatrixXd m = density_grid(g);
    const double h = (g.hi - g.lo) / (g.points - 1);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(g.points, h);
    w[0] = w[g.points - 1] = h / 2;
    CHECK(w.dot(m * w) == Approx(1.0).epsilon(1e-3));
  }
  GridSpec plain;
  const std::string csv = grid_csv(plain, density_grid(plain));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 101 * 101 + 1);
  plain.rho = 1.0;
  CHECK_THROWS(density_grid(plain));
}

TEST_CASE("atomic writes") {
  const fs::path dir = fs::temp_directory_path() / "copglmm_io_test";
  fs::remove_all(dir);
  const fs::path p = dir / "sub" / "out.txt";
  write_file_atomic(p, "first");
  write_file_atomic(p, "second");
  CHECK(read_file(p) == "second");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(p.parent_path())) ++entries;
  CHECK(entries == 1);
  fs::remove_all(dir);
}
