#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(COPGLMM_TEST_WORKDIR);
const fs::path kConfigs = fs::path(COPGLMM_CONFIG_DIR);

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Runs the CLI with stdout/stderr captured to files; returns the exit status.
int cli(const std::string& args, std::string* err = nullptr) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt", errf = kWork / "stderr.txt";
  const std::string cmd = "\"" COPGLMM_CLI "\" " + args + " > \"" + out.string() + "\" 2> \"" + errf.string() + "\"";
  const int raw = std::system(cmd.c_str());
  if (err) *err = slurp(errf);
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Smoke dataset written once per process.
const fs::path& smoke_data() {
  static const fs::path path = [] {
    const fs::path p = kWork / "smoke.csv";
    REQUIRE(cli("generate --config " + q(kConfigs / "smoke.json") + " --out " + q(p)) == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("gridplot writes a header plus one row per grid point") {
  const fs::path out = kWork / "grid.csv";
  REQUIRE(cli("gridplot --copula skewnormal --xi 0.25 --lambda 1,-1 --out " + q(out)) == 0);
  CHECK(count_lines(out) == 10202);
  CHECK(slurp(out).rfind("z1,z2,density\n", 0) == 0);

  CHECK(cli("gridplot --copula t --rho 0.5 --out " + q(out)) == 2);
  CHECK(cli("gridplot --copula clayton --rho 0.5 --out " + q(out)) == 2);
  CHECK(cli("gridplot --rho 0.5 --xi 1 --out " + q(out)) == 2);
}

TEST_CASE("fit writes reports that are identical across runs") {
  const fs::path a = kWork / "fit_a", b = kWork / "fit_b";
  const std::string args = "fit --data " + q(smoke_data()) + " --marginal gamma --copula skewt --nu-grid 3..4 --out ";
  REQUIRE(cli(args + q(a)) == 0);
  REQUIRE(cli(args + q(b)) == 0);
  for (const char* f : {"fit.json", "estimates.csv", "nu_table.csv"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "fit.json").find("\"schema_version\": 1") != std::string::npos);
}

TEST_CASE("compare ranks fit reports and rejects an empty list") {
  const fs::path g = kWork / "fit_gauss", s = kWork / "fit_sn";
  REQUIRE(cli("fit --data " + q(smoke_data()) + " --copula gaussian --out " + q(g)) == 0);
  REQUIRE(cli("fit --data " + q(smoke_data()) + " --copula skewnormal --out " + q(s)) == 0);
  const fs::path table = kWork / "compare.csv";
  REQUIRE(cli("compare " + q(g / "fit.json") + " " + q(s / "fit.json") + " --out " + q(table)) == 0);
  CHECK(count_lines(table) == 3);

  std::string err;
  CHECK(cli("compare", &err) == 2);
  CHECK(err.find("at least one") != std::string::npos);
  CHECK(cli("compare " + q(kWork / "missing.json")) == 2);
}

TEST_CASE("usage and input errors exit with 2") {
  CHECK(cli("") == 2);
  CHECK(cli("fit --data " + q(kWork / "nope.csv")) == 2);
  CHECK(cli("fit --data " + q(smoke_data()) + " --copula skewt") == 2);
  CHECK(cli("fit --data " + q(smoke_data()) + " --marginal poisson") == 2);

  const fs::path bad = kWork / "bad.csv";
  std::ofstream(bad) << "subject,time,y\n1,0,2\n";
  CHECK(cli("fit --data " + q(bad)) == 2);
}

TEST_CASE("a config with m = 0 names the field") {
  const fs::path cfg = kWork / "m0.yaml";
  std::ofstream(cfg) << "m: 0\nmarginal: {family: gamma, beta: [1.5, 0.5, 0.5, 1.0], variance: 1.0, kappa: 3.0}\n"
                        "copula: {family: gaussian, xi: 0.25}\n";
  std::string err;
  CHECK(cli("simulate --config " + q(cfg) + " --out " + q(kWork / "sim_m0"), &err) == 2);
  CHECK(err.find("m:") != std::string::npos);
}

TEST_CASE("a reference mismatch exits with 1") {
  std::string err;
  CHECK(cli("fit --data " + q(smoke_data()) + " --copula gaussian --expect hiv --out " + q(kWork / "fit_expect"),
            &err) == 1);
  CHECK(slurp(kWork / "stdout.txt").find("MISMATCH") != std::string::npos);
}

TEST_CASE("simulate summaries are identical across runs and thread counts") {
  const fs::path a = kWork / "sim_a", b = kWork / "sim_b";
  const std::string args = "simulate --config " + q(kConfigs / "smoke.json") + " --replications 2 --out ";
  REQUIRE(cli(args + q(a)) == 0);
  REQUIRE(cli(args + q(b) + " --threads 2") == 0);
  CHECK(slurp(a / "summary.csv") == slurp(b / "summary.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
}
