// One PASS/FAIL line per acceptance criterion. Tolerances are pinned here,
// independent of the tolerances declared in the shipped configs.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cascade_bsde/checks.hpp"
#include "cascade_bsde/config.hpp"
#include "cascade_bsde/experiments.hpp"

using namespace cbsde;

namespace {

struct Line {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
  void within(const std::string& what, double value, double tol) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s = %.3g <= %.3g", what.c_str(), value, tol);
    require(std::isfinite(value) && value <= tol, buf);
  }
};

Config shipped(const std::string& name) {
  return Config::load(std::string(CASCADE_BSDE_CONFIG_DIR) + "/" + name);
}

ExperimentReport eval(const std::string& name) { return evaluate_experiment(shipped(name)); }

void pinned_steps(Line& l, const std::string& name, int M) {
  const auto c = shipped(name);
  l.require(c.integer("M", 0, 0, 1 << 30) == M, name + " uses M=" + std::to_string(M));
}

void pinned_paths(Line& l, const std::string& name, const std::string& key, double paths) {
  const auto c = shipped(name);
  l.require(c.number(key, 0.0) >= paths, name + " uses " + key + ">=" + std::to_string(static_cast<long>(paths)));
}

int failures = 0;

void criterion(int id, const std::string& title, double budget_s, const std::function<void(Line&)>& body) {
  Line l;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(l);
  } catch (const std::exception& e) {
    l.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[96];
  std::snprintf(buf, sizeof buf, "runtime %.1f s < %.0f s", secs, budget_s);
  l.require(secs < budget_s, buf);
  if (!l.pass) ++failures;
  std::printf("%s criterion %d %s: %s\n", l.pass ? "PASS" : "FAIL", id, title.c_str(), l.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main() {
  criterion(1, "intro_example", 10.0, [](Line& l) {
    pinned_steps(l, "intro_example.json", 200);
    const auto r = eval("intro_example.json");
    l.within("|Y0 - e^-2|", std::abs(r.value("Y0") - std::exp(-2.0)), 5e-3);
  });

  criterion(2, "intensity_and_compensator", 30.0, [](Line& l) {
    pinned_paths(l, "compensator_check.json", "paths", 1e5);
    const auto r = eval("compensator_check.json");
    const double exact = 1.0 - std::exp(-0.5);
    l.within("max |lambda - 0.5|", r.assertion("intensity_error").value, 1e-6);
    l.within("|lhs - (1-e^-0.5)|", std::abs(r.value("lhs") - exact), 3.0 * r.value("stderr"));
    l.within("|rhs - (1-e^-0.5)|", std::abs(r.value("rhs") - exact), 3.0 * r.value("stderr"));
  });

  criterion(3, "pricing", 120.0, [](Line& l) {
    pinned_steps(l, "pricing.json", 50);
    pinned_paths(l, "pricing.json", "paths", 1e5);
    const auto r = eval("pricing.json");
    l.within("|closed form - cascade|", std::abs(r.value("Y0_closed_form") - r.value("Y0_cascade")), 2e-2);
    l.within("hedge |X_T - xi| no jump", r.assertion("hedge_error_no_jump").value, 3e-2);
    l.within("hedge |X_T - xi| jump", r.assertion("hedge_error_jump").value, 3e-2);
  });

  criterion(4, "utility_closed_form", 30.0, [](Line& l) {
    pinned_steps(l, "utility_oracle.json", 200);
    const auto r = eval("utility_oracle.json");
    const double exact = std::log(std::exp(1.0) * (1.0 - std::exp(-0.5)) + std::exp(-0.5));
    l.within("|Y0 - oracle|", std::abs(r.value("Y0") - exact), 5e-3);
  });

  criterion(5, "martingale_optimality", 180.0, [](Line& l) {
    pinned_paths(l, "utility_martingale.json", "martingale_paths", 1e5);
    const auto c = shipped("utility_martingale.json");
    const auto r = evaluate_experiment(c);
    const double dt = c.number("T") / c.number("M");
    const double r0 = r.value("R0");
    l.within("|E[R_T] - R0|", std::abs(r.value("E_RT") - r0), 3.0 * r.value("stderr") + 0.5 * dt * std::abs(r0));
    int perturbations = 0;
    for (const auto& a : r.assertions)
      if (a.name.rfind("perturbation_", 0) == 0) {
        ++perturbations;
        l.within("E[R_T^pi] - R0 (" + a.name + ")", a.value, a.tolerance);
      }
    l.require(perturbations >= 5, std::to_string(perturbations) + " perturbations");
  });

  criterion(6, "comparison", 60.0, [](Line& l) {
    for (const char* name : {"comparison_tree.json", "comparison_lsmc.json"}) {
      const auto r = eval(name);
      for (double delta : {0.01, 0.1}) {
        char key[48];
        std::snprintf(key, sizeof key, "comparison_delta_%g", delta);
        l.require(r.assertion(key).pass, std::string(name) + " " + key);
      }
    }
  });

  criterion(7, "backend_agreement", 120.0, [](Line& l) {
    const auto r = eval("utility_uniqueness.json");
    l.within("|tree - lsmc|", std::abs(r.value("Y0") - r.value("Y0_lsmc")), 2e-2);
    l.within("|direct - transform| tree", std::abs(r.value("Y0") - r.value("Y0_transformed")), 2e-2);
    l.within("|direct - transform| lsmc", std::abs(r.value("Y0_lsmc") - r.value("Y0_transformed_lsmc")), 2e-2);
  });

  criterion(8, "structural_invariants", 60.0, [](Line& l) {
    const auto results = run_checks("cascade");
    for (const char* want : {"adaptedness", "jump_identity", "glued_sup_bound", "u_zero_after_last_jump"}) {
      bool found = false;
      for (const auto& r : results)
        if (r.name == want) {
          found = true;
          l.require(r.pass, want);
        }
      if (!found) l.require(false, std::string(want) + " missing");
    }
  });

  return failures == 0 ? 0 : 1;
}
