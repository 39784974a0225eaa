#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cascade_bsde/checks.hpp"
#include "cascade_bsde/config.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/experiments.hpp"
#include "cascade_bsde/rng.hpp"

namespace py = pybind11;
using namespace cbsde;

namespace {

py::dict to_dict(const ExperimentReport& r) {
  py::dict headline;
  for (const auto& [k, v] : r.headline) headline[py::str(k)] = v;
  py::list assertions;
  for (const auto& a : r.assertions) {
    py::dict d;
    d["name"] = a.name;
    d["value"] = a.value;
    d["tolerance"] = a.tolerance;
    d["pass"] = a.pass;
    assertions.append(d);
  }
  py::dict out;
  out["experiment"] = r.experiment;
  out["seed"] = r.seed;
  out["output_dir"] = r.output_dir;
  out["pass"] = r.pass();
  out["headline"] = headline;
  out["assertions"] = assertions;
  return out;
}

RunOverrides overrides(std::optional<std::uint64_t> seed, std::optional<int> threads,
                       std::optional<std::string> output_dir, bool dump) {
  RunOverrides o;
  o.seed = seed;
  o.threads = threads;
  o.output_dir = std::move(output_dir);
  o.dump_brownian = dump;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recursive cascade BSDE solver with jumps";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("experiment_names", &experiment_names);
  m.def("check_suites", &check_suites);

  m.def(
      "run",
      [](const std::string& text, const std::string& origin, std::optional<std::uint64_t> seed,
         std::optional<int> threads, std::optional<std::string> output_dir, bool dump, bool write) {
        const Config cfg = Config::parse(text, origin);
        const RunOverrides o = overrides(seed, threads, std::move(output_dir), dump);
        ExperimentReport r;
        {
          py::gil_scoped_release release;
          r = write ? run_experiment(cfg, o) : evaluate_experiment(cfg, o);
        }
        return to_dict(r);
      },
      py::arg("config_json"), py::arg("origin") = "config", py::arg("seed") = py::none(),
      py::arg("threads") = py::none(), py::arg("output_dir") = py::none(), py::arg("dump_brownian") = false,
      py::arg("write") = true);

  m.def(
      "check",
      [](const std::string& suite, int M, std::size_t paths, std::uint64_t seed, int threads, bool inject_fault) {
        CheckOptions o;
        o.M = M;
        o.paths = paths;
        o.seed = seed;
        o.threads = threads;
        o.inject_fault = inject_fault;
        std::vector<InvariantResult> res;
        {
          py::gil_scoped_release release;
          res = run_checks(suite, o);
        }
        py::list out;
        for (const auto& r : res) {
          py::dict d;
          d["suite"] = r.suite;
          d["name"] = r.name;
          d["pass"] = r.pass;
          d["value"] = r.value;
          d["tolerance"] = r.tolerance;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("suite") = "all", py::arg("M") = 50, py::arg("paths") = 10000, py::arg("seed") = 7,
      py::arg("threads") = 0, py::arg("inject_fault") = false);

  m.def(
      "philox",
      [](std::uint64_t key, std::array<std::uint32_t, 4> counter) { return Philox4x32(key)(counter); },
      py::arg("key"), py::arg("counter"));
}
