#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace cbsde {

struct CheckOptions {
  int M = 50;
  std::size_t paths = 10000;
  std::uint64_t seed = 7;
  int threads = 0;
  // Flips the sign of the comparison fixture; the cascade suite must then fail.
  bool inject_fault = false;
};

struct InvariantResult {
  std::string suite;
  std::string name;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

std::vector<std::string> check_suites();

// suite is one of check_suites() or "all"; anything else is a ValidationError.
std::vector<InvariantResult> run_checks(const std::string& suite, const CheckOptions& opts = {});

// One row per invariant, then a PASS/FAIL total.
void print_check_table(std::span<const InvariantResult> results, std::ostream& out);

}  // namespace cbsde
