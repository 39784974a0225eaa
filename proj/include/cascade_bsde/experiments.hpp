#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cascade_bsde/config.hpp"

namespace cbsde {

inline constexpr const char* kSeedEnv = "CASCADE_BSDE_SEED";

// Command-line values win over CASCADE_BSDE_SEED, which wins over the config.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output_dir;
  bool dump_brownian = false;  // also write brownian.csv (path,step,dW)
};

struct Assertion {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct ExperimentReport {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::vector<std::pair<std::string, double>> headline;
  std::vector<Assertion> assertions;

  bool pass() const;
  double value(const std::string& key) const;  // headline entry, throws if absent
  const Assertion& assertion(const std::string& name) const;
};

std::vector<std::string> experiment_names();

// Resolves the seed by precedence; a malformed environment value is a ValidationError.
std::uint64_t resolve_seed(const Config& cfg, const RunOverrides& o);

// Validates the whole configuration, then runs the experiment and writes
// results.csv, summary.json and plot.csv into the output directory. Nothing
// is written when validation fails.
ExperimentReport run_experiment(const Config& cfg, const RunOverrides& o = {});

// Same as run_experiment without touching the filesystem.
ExperimentReport evaluate_experiment(const Config& cfg, const RunOverrides& o = {});

}  // namespace cbsde
