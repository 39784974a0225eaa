#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cascade_bsde/config.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/experiments.hpp"

using namespace cbsde;
namespace fs = std::filesystem;

namespace {

Config shipped(const std::string& name) {
  return Config::load(std::string(CASCADE_BSDE_CONFIG_DIR) + "/" + name);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cascade_bsde_test_" + name);
  fs::remove_all(p);
  return p;
}

struct EnvSeed {
  explicit EnvSeed(const char* v) { ::setenv(kSeedEnv, v, 1); }
  ~EnvSeed() { ::unsetenv(kSeedEnv); }
};

Config small_compensator() {
  Config c = shipped("compensator_check.json");
  c.set("paths", 20000.0);
  return c;
}

Config small_lsmc_comparison() {
  Config c = shipped("comparison_lsmc.json");
  c.set("M", 10.0);
  c.set("paths", 2000.0);
  return c;
}

}  // namespace

TEST_CASE("every shipped experiment name is known") {
  const auto names = experiment_names();
  for (const char* n : {"intro_example", "compensator_check", "pricing", "utility", "cascade", "comparison"})
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
}

TEST_CASE("same seed gives byte-identical outputs") {
  const Config c = small_compensator();
  RunOverrides a, b;
  a.output_dir = scratch("det_a").string();
  b.output_dir = scratch("det_b").string();
  run_experiment(c, a);
  run_experiment(c, b);
  for (const char* f : {"results.csv", "summary.json"}) {
    const std::string x = slurp(fs::path(*a.output_dir) / f);
    CHECK(!x.empty());
    CHECK(x == slurp(fs::path(*b.output_dir) / f));
  }
}

TEST_CASE("results do not depend on the thread count") {
  const Config c = small_lsmc_comparison();
  RunOverrides one, four;
  one.threads = 1;
  four.threads = 4;
  one.output_dir = scratch("thr_1").string();
  four.output_dir = scratch("thr_4").string();
  run_experiment(c, one);
  run_experiment(c, four);
  CHECK(slurp(fs::path(*one.output_dir) / "results.csv") == slurp(fs::path(*four.output_dir) / "results.csv"));
}

TEST_CASE("a different seed changes the estimate") {
  const Config c = small_compensator();
  RunOverrides a, b;
  a.seed = 1;
  b.seed = 2;
  CHECK(evaluate_experiment(c, a).value("lhs") != evaluate_experiment(c, b).value("lhs"));
}

TEST_CASE("seed precedence: command line, then environment, then config") {
  Config c = Config::parse(R"({"experiment": "compensator_check", "seed": 11})");
  RunOverrides none, cli;
  cli.seed = 99;
  CHECK(resolve_seed(c, none) == 11);
  {
    EnvSeed env("42");
    CHECK(resolve_seed(c, none) == 42);
    CHECK(resolve_seed(c, cli) == 99);
  }
  {
    EnvSeed env("not-a-number");
    CHECK_THROWS_AS(resolve_seed(c, none), ValidationError);
  }
}

TEST_CASE("validation failures write nothing") {
  const fs::path dir = scratch("invalid");
  RunOverrides o;
  o.output_dir = dir.string();
  try {
    run_experiment(shipped("invalid_zero_steps.json"), o);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "M");
  }
  CHECK(!fs::exists(dir));

  Config late = small_compensator();
  late.set("test_function", std::string("bogus"));
  CHECK_THROWS_AS(run_experiment(late, o), ValidationError);
  CHECK(!fs::exists(dir));

  Config unknown = small_compensator();
  unknown.set("colour", 1.0);
  CHECK_THROWS_AS(run_experiment(unknown, o), ValidationError);
  CHECK(!fs::exists(dir));
}

TEST_CASE("summary carries the assertion verdicts") {
  RunOverrides o;
  o.output_dir = scratch("summary").string();
  const ExperimentReport r = run_experiment(small_compensator(), o);
  const std::string s = slurp(fs::path(*o.output_dir) / "summary.json");
  CHECK(s.find("\"experiment\": \"compensator_check\"") != std::string::npos);
  CHECK(s.find("\"compensator_gap_pass\"") != std::string::npos);
  CHECK(r.assertion("compensator_gap").tolerance > 0.0);
}
