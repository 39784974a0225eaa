#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cascade_bsde/checks.hpp"
#include "cascade_bsde/config.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/experiments.hpp"

namespace {

enum Exit { kPass = 0, kAssertion = 1, kValidation = 2, kInternal = 3 };

std::string quoted(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '"') c = '\'';
  return "\"" + s + "\"";
}

int run(const std::string& path, const cbsde::RunOverrides& o) {
  const cbsde::Config cfg = cbsde::Config::load(path);
  const cbsde::ExperimentReport rep = cbsde::run_experiment(cfg, o);
  std::cout << rep.experiment << " (seed " << rep.seed << ")\n";
  for (const auto& [k, v] : rep.headline) std::cout << "  " << k << " = " << v << "\n";
  std::string failed;
  for (const auto& a : rep.assertions) {
    std::cout << "  " << (a.pass ? "PASS " : "FAIL ") << a.name << ": " << a.value << " <= " << a.tolerance << "\n";
    if (!a.pass) failed += (failed.empty() ? "" : ",") + a.name;
  }
  std::cout << (rep.pass() ? "PASS" : "FAIL") << " -> " << rep.output_dir << "\n";
  if (!failed.empty()) {
    std::cerr << "error=assertion experiment=" << rep.experiment << " failed=" << failed << "\n";
    return kAssertion;
  }
  return kPass;
}

int check(const std::string& suite, const cbsde::CheckOptions& o) {
  const auto results = cbsde::run_checks(suite, o);
  cbsde::print_check_table(results, std::cout);
  std::string failed;
  for (const auto& r : results)
    if (!r.pass) failed += (failed.empty() ? "" : ",") + r.suite + "." + r.name;
  if (!failed.empty()) {
    std::cerr << "error=assertion suite=" << suite << " failed=" << failed << "\n";
    return kAssertion;
  }
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recursive cascade BSDE solver with jumps"};
  app.require_subcommand(1);

  std::string config_path;
  std::int64_t seed = -1;
  int threads = -1;
  std::string output;
  bool dump = false;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run_cmd->add_option("config", config_path, "Config file")->required();
  run_cmd->add_option("--seed", seed, "Seed (overrides CASCADE_BSDE_SEED and the config)")->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--threads", threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--output", output, "Output directory");
  run_cmd->add_flag("--dump-brownian", dump, "Also write the Brownian increments as brownian.csv");

  std::string suite = "all";
  cbsde::CheckOptions copts;
  std::int64_t check_seed = -1;
  int check_threads = -1;
  auto* check_cmd = app.add_subcommand("check", "Run the invariant suites");
  check_cmd->add_option("suite", suite, "all, jump_model, bsde, cascade or applications");
  check_cmd->add_option("--M", copts.M, "Time steps")->check(CLI::PositiveNumber);
  check_cmd->add_option("--paths", copts.paths, "Simulation paths")->check(CLI::PositiveNumber);
  check_cmd->add_option("--seed", check_seed, "Seed")->check(CLI::NonNegativeNumber);
  check_cmd->add_option("--threads", check_threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  check_cmd->add_flag("--inject-fault", copts.inject_fault, "Flip the comparison fixture (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error=validation field=arguments message=" << quoted(e.what()) << "\n";
    return kValidation;
  }

  try {
    if (*run_cmd) {
      cbsde::RunOverrides o;
      if (seed >= 0) o.seed = static_cast<std::uint64_t>(seed);
      if (threads >= 0) o.threads = threads;
      if (!output.empty()) o.output_dir = output;
      o.dump_brownian = dump;
      return run(config_path, o);
    }
    if (check_seed >= 0) copts.seed = static_cast<std::uint64_t>(check_seed);
    if (check_threads >= 0) copts.threads = check_threads;
    return check(suite, copts);
  } catch (const cbsde::ValidationError& e) {
    std::cerr << "error=validation field=" << e.field() << " message=" << quoted(e.what()) << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error=internal message=" << quoted(e.what()) << "\n";
    return kInternal;
  }
}
