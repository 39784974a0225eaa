#include "cascade_bsde/experiments.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <array>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cascade_bsde/cascade.hpp"
#include "cascade_bsde/csv.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/parallel.hpp"
#include "cascade_bsde/pricing.hpp"
#include "cascade_bsde/scenario.hpp"
#include "cascade_bsde/utility.hpp"

namespace cbsde {

bool ExperimentReport::pass() const {
  return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.pass; });
}

double ExperimentReport::value(const std::string& key) const {
  for (const auto& [k, v] : headline)
    if (k == key) return v;
  throw std::out_of_range("no headline value '" + key + "'");
}

const Assertion& ExperimentReport::assertion(const std::string& name) const {
  for (const auto& a : assertions)
    if (a.name == name) return a;
  throw std::out_of_range("no assertion '" + name + "'");
}

std::vector<std::string> experiment_names() {
  return {"intro_example", "compensator_check", "pricing", "utility", "cascade", "comparison"};
}

std::uint64_t resolve_seed(const Config& cfg, const RunOverrides& o) {
  if (o.seed) return *o.seed;
  if (const char* env = std::getenv(kSeedEnv); env && *env) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || *end != '\0' || env[0] == '-')
      throw ValidationError(kSeedEnv, "expected a non-negative integer, got '" + std::string(env) + "'");
    return v;
  }
  return static_cast<std::uint64_t>(cfg.integer("seed", 0, 0, std::int64_t{1} << 53));
}

namespace {

const std::vector<std::string> kCommonKeys = {
    "experiment", "T", "M", "paths", "basis_degree", "seed", "threads", "output_dir", "backend",
    "model", "lambda0", "n_jumps", "mark_points", "mark_weights", "model_file", "horizon", "quad_step",
    "compress_last_jump", "cap", "truncation", "monotone_guard", "picard"};

// Lattice subsampling for the cascade dump: a full M=200 lattice is millions of rows.
int results_stride(const Config& c, const TimeGrid& g) {
  return static_cast<int>(c.integer("results_stride", std::max(1, g.M / 50), 1, g.M));
}

struct Common {
  std::string experiment;
  TimeGrid grid;
  std::size_t paths = 0;
  int degree = 3;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string output_dir;
  Backend backend = Backend::tree;
  std::string model_kind;
  double lambda0 = 0.0;
  DensityModelPtr model;
  CascadeOptions cascade;
};

struct Outcome {
  Common common;
  ExperimentReport report;
  std::string results;
  std::string plot;
  std::optional<BrownianBatch> brownian;
};

MarkGrid parse_marks(const Config& c, const MarkGrid& fallback) {
  if (!c.has("mark_points")) {
    if (c.has("mark_weights")) throw ValidationError("mark_weights", "given without mark_points");
    return fallback;
  }
  const auto pts = c.list("mark_points", {});
  const auto w = c.list("mark_weights", std::vector<double>(pts.size(), 1.0));
  if (w.size() != pts.size()) throw ValidationError("mark_weights", "must have one weight per mark point");
  for (double x : w)
    if (!(x > 0.0)) throw ValidationError("mark_weights", "weights must be positive");
  MarkGrid m(pts, w);
  m.validate();
  return m;
}

Common parse_common(const Config& c, const RunOverrides& o, std::size_t default_paths,
                    Backend default_backend, const MarkGrid& default_marks, bool default_guard = false) {
  Common cm;
  cm.experiment = c.str("experiment");
  const double T = c.positive("T", 1.0);
  const int M = static_cast<int>(c.integer("M", 50, 1, 100000));
  cm.grid = TimeGrid(T, M);
  cm.paths = static_cast<std::size_t>(c.integer("paths", static_cast<std::int64_t>(default_paths), 2, 100000000));
  cm.degree = static_cast<int>(c.integer("basis_degree", 3, 0, 8));
  cm.seed = resolve_seed(c, o);
  cm.threads = o.threads ? *o.threads : static_cast<int>(c.integer("threads", 0, 0, 1024));
  if (cm.threads < 0) throw ValidationError("threads", "must be non-negative");
  cm.output_dir = o.output_dir ? *o.output_dir : c.str("output_dir", "out/" + cm.experiment);
  cm.backend = c.has("backend") ? parse_backend(c.str("backend")) : default_backend;
  if (cm.backend == Backend::closed_form) throw ValidationError("backend", "expected tree or lsmc");

  const MarkGrid marks = parse_marks(c, default_marks);
  cm.model_kind = c.str("model", "exponential");
  cm.lambda0 = c.positive("lambda0", 0.5);
  const double horizon = c.positive("horizon", 40.0);
  const double quad_step = c.positive("quad_step", 1e-3);
  if (horizon < T) throw ValidationError("horizon", "must be at least T");
  const int n = static_cast<int>(c.integer("n_jumps", 1, 1, kMaxJumps));
  if (cm.model_kind == "exponential") {
    if (n != 1) throw ValidationError("n_jumps", "the exponential model has a single jump");
    cm.model = make_exponential_model(cm.lambda0, marks, horizon, quad_step);
  } else if (cm.model_kind == "product_exponential") {
    cm.model = make_product_exponential_model(n, cm.lambda0, marks, horizon, quad_step);
  } else if (cm.model_kind == "tabulated") {
    std::filesystem::path file = c.str("model_file");
    if (file.is_relative()) file = std::filesystem::path(c.origin()).parent_path() / file;
    if (!std::filesystem::exists(file)) throw ValidationError("model_file", "cannot read '" + file.string() + "'");
    cm.model = load_tabulated_model(file.string(), c.list("mark_weights", {}), quad_step);
  } else {
    throw ValidationError("model", "expected exponential, product_exponential or tabulated, got '" +
                                       cm.model_kind + "'");
  }
  if (cm.model->n() > kMaxJumps) throw ValidationError("n_jumps", "at most 3 jumps are supported");

  cm.cascade.backend = cm.backend;
  cm.cascade.compress_last_jump = c.flag("compress_last_jump", false);
  cm.cascade.cap = c.has("cap") ? c.positive("cap", 1.0) : kInf;
  cm.cascade.truncation = c.number("truncation", 0.0);
  if (cm.cascade.truncation < 0.0) throw ValidationError("truncation", "must be non-negative");
  cm.cascade.solver.monotone_guard = c.flag("monotone_guard", default_guard);
  cm.cascade.solver.picard = c.flag("picard", false);
  cm.cascade.threads = cm.threads;
  return cm;
}

void require_keys(const Config& c, const std::vector<std::string>& specific) {
  std::vector<std::string> allowed = kCommonKeys;
  allowed.insert(allowed.end(), specific.begin(), specific.end());
  c.require_known(allowed);
}

void headline(ExperimentReport& r, const std::string& key, double v) { r.headline.emplace_back(key, v); }

// Every assertion reads value <= tolerance.
void check(ExperimentReport& r, const std::string& name, double value, double tol) {
  r.assertions.push_back({name, value, tol, value <= tol});
}

std::shared_ptr<const LsmcContext> make_context(const Common& cm, const TimeGrid& grid, std::size_t paths,
                                                std::uint64_t seed) {
  return std::make_shared<const LsmcContext>(simulate_brownian(grid, paths, seed), cm.degree, cm.threads);
}

IncrementKind scenario_kind(Backend b) {
  return b == Backend::tree ? IncrementKind::rademacher : IncrementKind::gaussian;
}

History stacked_history(int k) { return {std::vector<int>(k, 0), std::vector<int>(k, 0)}; }

// t vs Y^k at x = 0 with all k jumps at node 0, mark 0.
std::string cascade_plot(const CascadeSolution& s) {
  std::ostringstream out;
  CsvWriter w(out, {"t", "regime", "Y"});
  for (int k = 0; k <= s.n(); ++k) {
    const BsdeSolution& sol = s.solution(stacked_history(k));
    for (int i = 0; i <= s.grid().M; ++i) w.row({fmt(s.grid().t(i)), std::to_string(k), fmt(sol.y(i, 0.0))});
  }
  return out.str();
}

std::string cascade_results(const CascadeSolution& s, int stride) {
  std::ostringstream out;
  write_cascade_csv(s, out, stride);
  return out.str();
}

// Affine family f = a y + b z + kappa sum_e w_e lambda_e u_e + g.
struct LinearFamily {
  double a = 0.0, b = 0.0, kappa = 0.0, g = 0.0;
};

const std::vector<std::string> kLinearKeys = {"driver_a",       "driver_b",          "driver_kappa",
                                              "driver_g",       "terminal_base",     "terminal_per_jump",
                                              "terminal_slope", "terminal_bound"};

LinearFamily parse_linear(const Config& c) {
  return {c.number("driver_a", 0.0), c.number("driver_b", 0.0), c.number("driver_kappa", 1.0),
          c.number("driver_g", 0.0)};
}

ClaimSpec parse_terminal(const Config& c) {
  ClaimSpec s;
  s.base = c.number("terminal_base", 0.0);
  s.per_jump = c.number("terminal_per_jump", 1.0);
  s.slope = c.number("terminal_slope", 0.0);
  s.bound = c.positive("terminal_bound", 10.0);
  return s;
}

DecomposedDriver linear_driver(const LinearFamily& f, const DensityModel& model) {
  DecomposedDriver d;
  d.driver_class = DriverClass::affine;
  d.f = [f](const DriverArgs& a) {
    double jump = 0.0;
    for (std::size_t e = 0; e < a.u.size(); ++e) jump += a.marks->weights[e] * a.lambda[e] * a.u[e];
    return f.a * a.y + f.b * a.z + f.kappa * jump + f.g;
  };
  const double lam = std::isfinite(model.intensity_bound()) ? model.intensity_bound() : 0.0;
  d.lipschitz_y = std::abs(f.a) + std::abs(f.kappa) * lam;
  d.lipschitz_z = std::abs(f.b);
  return d;
}

DecomposedTerminal claim_terminal(const ClaimSpec& s) {
  return {[s](const History& h, double x) { return s(h.size(), x); }};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + p.string() + "'");
}

std::string summary_json(const ExperimentReport& r, const Common& cm) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["status"] = r.pass() ? "PASS" : "FAIL";
  j["seed"] = r.seed;
  j["T"] = cm.grid.T;
  j["M"] = cm.grid.M;
  j["paths"] = cm.paths;
  j["backend"] = to_string(cm.backend);
  j["model"] = cm.model_kind;
  for (const auto& [k, v] : r.headline) j[k] = v;
  for (const auto& a : r.assertions) {
    j[a.name] = a.value;
    j[a.name + "_tolerance"] = a.tolerance;
    j[a.name + "_pass"] = a.pass;
  }
  return j.dump(2) + "\n";
}

using Plan = std::function<Outcome()>;

Outcome start(const Common& cm) {
  Outcome out;
  out.common = cm;
  out.report.experiment = cm.experiment;
  out.report.seed = cm.seed;
  out.report.output_dir = cm.output_dir;
  return out;
}

// Scenario batches use seed + 1 and extra simulations seed + 2, so they never
// reuse the regression paths drawn from `seed`.
Plan plan_intro(const Config& c, const RunOverrides& o) {
  require_keys(c, {"c", "h", "tolerance", "residual_tolerance", "results_stride"});
  const Common cm = parse_common(c, o, 10000, Backend::tree, MarkGrid({0.0, 1.0}, {1.0, 1.0}));
  if (cm.model->n() != 1) throw ValidationError("n_jumps", "the introductory example has a single jump");
  const double cval = c.number("c", 1.0);
  const std::size_t E = cm.model->marks().size();
  std::vector<double> h = c.list("h", {0.0});
  if (h.size() == 1) h.assign(E, h[0]);
  if (h.size() != E) throw ValidationError("h", "expected one value or one per mark");
  const double tol = c.positive("tolerance", 5e-3);
  const double res_tol = c.positive("residual_tolerance", cm.grid.dt());
  const int stride = results_stride(c, cm.grid);
  return [=]() {
    Outcome out = start(cm);
    DecomposedTerminal term{[cval, h](const History& hist, double) {
      return hist.size() == 0 ? cval : h[hist.marks[0]];
    }};
    DecomposedDriver drv;
    drv.driver_class = DriverClass::affine;
    drv.f = [](const DriverArgs& a) { return std::accumulate(a.u.begin(), a.u.end(), 0.0); };
    drv.lipschitz_y = static_cast<double>(E);
    auto ctx = cm.backend == Backend::lsmc ? make_context(cm, cm.grid, cm.paths, cm.seed) : nullptr;
    const CascadeSolution sol = solve_cascade(term, drv, cm.model, cm.grid, cm.cascade, ctx);
    const double y0 = sol.solution(History{}).y0();
    // Y^1 = h(e) since f(0) = 0; Y^0' = E Y^0 - sum h.
    const double hm = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(E);
    const double oracle = hm + (cval - hm) * std::exp(-static_cast<double>(E) * cm.grid.T);
    headline(out.report, "Y0", y0);
    headline(out.report, "Y0_oracle", oracle);
    check(out.report, "y0_error", std::abs(y0 - oracle), tol);

    const BrownianBatch batch = simulate_brownian(cm.grid, cm.paths, cm.seed + 1, scenario_kind(cm.backend));
    const ResidualStats rs = verify_bsde_residual(sol, batch, JumpSampler(cm.model), cm.seed + 1, cm.threads);
    headline(out.report, "residual_mean", rs.mean);
    headline(out.report, "residual_mean_abs", rs.mean_abs);
    headline(out.report, "residual_max_abs", rs.max_abs);
    headline(out.report, "residual_stderr", rs.std_err);
    check(out.report, "residual_mean_error", std::abs(rs.mean), 3.0 * rs.std_err + res_tol);
    out.results = cascade_results(sol, stride);
    out.plot = cascade_plot(sol);
    if (o.dump_brownian) out.brownian = batch;
    return out;
  };
}

Plan plan_compensator(const Config& c, const RunOverrides& o) {
  require_keys(c, {"test_function", "intensity_tolerance"});
  const Common cm = parse_common(c, o, 100000, Backend::tree, MarkGrid::singleton());
  const std::string fn = c.str("test_function", "one");
  if (fn != "one" && fn != "time" && fn != "mark")
    throw ValidationError("test_function", "expected one, time or mark, got '" + fn + "'");
  const double itol = c.positive("intensity_tolerance", 1e-6);
  return [=]() {
    Outcome out = start(cm);
    const MarkGrid& marks = cm.model->marks();
    JumpTestFunction U = [&](double t, int e, const MarkedJumpSample&) {
      if (fn == "time") return t;
      if (fn == "mark") return marks.points[e];
      return 1.0;
    };
    const JumpSampler sampler(cm.model);
    const CompensatorResult res = compensator_check(sampler, U, cm.grid.T, cm.paths, cm.seed, cm.threads);
    headline(out.report, "lhs", res.lhs);
    headline(out.report, "rhs", res.rhs);
    headline(out.report, "stderr_lhs", res.stderr_lhs);
    headline(out.report, "stderr_rhs", res.stderr_rhs);
    headline(out.report, "stderr", res.std_err);
    check(out.report, "compensator_gap", std::abs(res.lhs - res.rhs), 3.0 * res.std_err);

    const bool exponential = cm.model_kind == "exponential" || cm.model_kind == "product_exponential";
    if (fn == "one" && cm.model_kind == "exponential") {
      const double exact = -std::expm1(-cm.lambda0 * cm.grid.T);
      headline(out.report, "exact", exact);
      check(out.report, "lhs_error", std::abs(res.lhs - exact), 3.0 * res.std_err);
      check(out.report, "rhs_error", std::abs(res.rhs - exact), 3.0 * res.std_err);
    }
    const IntensityRow row = intensity_row(*cm.model, cm.grid, {}, {});
    std::ostringstream csv;
    CsvWriter w(csv, {"t", "lambda_total"});
    double worst = 0.0;
    for (int i = 0; i <= cm.grid.M; ++i) {
      double total = 0.0;
      for (std::size_t e = 0; e < marks.size(); ++e) total += marks.weights[e] * row.at(i, e);
      worst = std::max(worst, std::abs(total - cm.lambda0));
      w.row({fmt(cm.grid.t(i)), fmt(total)});
    }
    if (exponential) {
      headline(out.report, "lambda0", cm.lambda0);
      check(out.report, "intensity_error", worst, itol);
    }
    out.results = csv.str();
    out.plot = csv.str();
    return out;
  };
}

Payoff parse_payoff(const Config& c, const std::string& kind_key, const std::string& strike_key,
                    const Payoff& fallback) {
  Payoff p = fallback;
  if (c.has(kind_key)) {
    try {
      p.kind = Payoff::parse(c.str(kind_key));
    } catch (const ValidationError& e) {
      throw ValidationError(kind_key, e.what());
    }
  }
  p.strike = c.positive(strike_key, fallback.strike);
  return p;
}

Plan plan_pricing(const Config& c, const RunOverrides& o) {
  require_keys(c, {"r0", "b0", "bbar0", "sigma0", "sigmabar0", "r1", "b1", "bbar1", "sigma1", "sigmabar1",
                   "beta", "s0", "s1", "s2", "payoff", "strike", "notional", "payoff1", "strike1",
                   "hedge_payoff", "hedge_strike", "hedge_paths", "price_tolerance", "hedge_tolerance"});
  const Common cm = parse_common(c, o, 100000, Backend::lsmc, MarkGrid::singleton());
  PricingProblem p;
  SingleJumpMarket& m = p.market;
  m.pre = {c.number("r0", 0.01), c.number("b0", 0.05), c.positive("sigma0", 0.2), c.number("bbar0", 0.04),
           c.positive("sigmabar0", 0.2)};
  m.post = {c.number("r1", 0.02), c.number("b1", 0.05), c.positive("sigma1", 0.2), c.number("bbar1", 0.04),
            c.positive("sigmabar1", 0.2)};
  m.beta = c.number("beta", -0.3);
  m.s0 = c.positive("s0", 1.0);
  m.s1 = c.positive("s1", 1.0);
  m.s2 = c.positive("s2", 1.0);
  Payoff base;
  base.kind = Payoff::Kind::digital;
  base.notional = c.number("notional", 1.0);
  p.payoff0 = parse_payoff(c, "payoff", "strike", base);
  p.payoff1 = parse_payoff(c, "payoff1", "strike1", p.payoff0);
  p.model = cm.model;
  p.grid = cm.grid;
  p.validate();
  PricingProblem hp = p;
  hp.payoff0 = hp.payoff1 = parse_payoff(c, "hedge_payoff", "hedge_strike", p.payoff0);
  hp.validate();
  const std::size_t hedge_paths =
      static_cast<std::size_t>(c.integer("hedge_paths", 10000, 2, 100000000));
  const double ptol = c.positive("price_tolerance", 2e-2);
  const double htol = c.positive("hedge_tolerance", 3e-2);
  return [=]() {
    Outcome out = start(cm);
    const ClosedFormPrice cf(p);
    const double y0_cf = cf.y0(0.0, 0.0);
    auto ctx = cm.backend == Backend::lsmc ? make_context(cm, cm.grid, cm.paths, cm.seed) : nullptr;
    const CascadeSolution sol = solve_cascade(pricing_terminal(p), pricing_driver(p), cm.model, cm.grid,
                                              cm.cascade, ctx);
    const BsdeSolution& s0 = sol.solution(History{});
    headline(out.report, "Y0_closed_form", y0_cf);
    headline(out.report, "Y0_cascade", s0.y0());
    headline(out.report, "Y0_cascade_stderr", s0.diagnostics().y0_stderr);
    check(out.report, "price_gap", std::abs(s0.y0() - y0_cf), ptol);

    const ClosedFormPrice ch(hp);
    const HedgeReport rep = simulate_hedge(ch, hedge_paths, cm.seed + 1, cm.threads);
    headline(out.report, "hedge_price", ch.y0(0.0, 0.0));
    headline(out.report, "hedge_paths", static_cast<double>(rep.paths));
    headline(out.report, "hedge_jump_paths", static_cast<double>(rep.jump_paths));
    headline(out.report, "hedge_max_mean_tracking", rep.max_mean_tracking);
    headline(out.report, "hedge_identity_residual", rep.max_identity_residual);
    check(out.report, "hedge_error_no_jump", rep.mean_abs_error_no_jump, htol);
    if (rep.jump_paths > 0) check(out.report, "hedge_error_jump", rep.mean_abs_error_jump, htol);

    std::ostringstream res;
    write_pricing_csv(cf, res);
    out.results = res.str();
    std::ostringstream plot;
    CsvWriter w(plot, {"t", "regime", "Y"});
    for (int k = 0; k <= 1; ++k)
      for (int i = 0; i <= cm.grid.M; ++i) {
        const double t = cm.grid.t(i);
        w.row({fmt(t), std::to_string(k), fmt(k == 0 ? cf.y0(t, 0.0) : cf.y1(t, 0.0, t))});
      }
    out.plot = plot.str();
    if (o.dump_brownian && ctx) out.brownian = simulate_brownian(cm.grid, cm.paths, cm.seed);
    return out;
  };
}

Plan plan_utility(const Config& c, const RunOverrides& o) {
  require_keys(c, {"alpha", "c_lo", "c_hi", "b", "sigma", "beta", "claim_base", "claim_per_jump", "claim_slope",
                   "claim_bound", "x0", "z_clip", "oracle", "tolerance", "transform", "transform_tolerance",
                   "second_backend", "second_M", "second_paths", "backend_tolerance", "martingale_paths",
                   "martingale_dt_factor", "check_zero_strategy", "perturbations", "perturbation_shifts",
                   "perturbation_noise", "check_monotone_c", "monotone_tolerance"});
  const Common cm = parse_common(c, o, 100000, Backend::tree, MarkGrid::singleton());
  UtilityProblem p;
  p.alpha = c.positive("alpha", 1.0);
  p.c_lo = c.number("c_lo", -1.0);
  p.c_hi = c.number("c_hi", 1.0);
  p.market.b = c.list("b", {0.1});
  p.market.sigma = c.list("sigma", {0.3});
  p.market.beta = c.matrix("beta", {{-0.2}});
  if (p.market.sigma.size() != p.market.b.size()) throw ValidationError("sigma", "one entry per regime of b");
  if (p.market.beta.size() != p.market.b.size()) throw ValidationError("beta", "one row per regime of b");
  p.claim.base = c.number("claim_base", 0.0);
  p.claim.per_jump = c.number("claim_per_jump", 1.0);
  p.claim.slope = c.number("claim_slope", 0.0);
  p.claim.bound = c.positive("claim_bound", 10.0);
  p.x0 = c.number("x0", 0.0);
  p.z_clip = c.positive("z_clip", 25.0);
  p.model = cm.model;
  p.grid = cm.grid;
  p.validate();
  if (c.has("c_lo") && p.c_lo > p.c_hi) throw ValidationError("c_lo", "must not exceed c_hi");

  const std::string oracle = c.str("oracle", "none");
  if (oracle != "none" && oracle != "closed_form")
    throw ValidationError("oracle", "expected none or closed_form, got '" + oracle + "'");
  if (oracle == "closed_form") {
    const bool fits = cm.model_kind == "exponential" && cm.model->marks().size() == 1 && p.c_lo == 0.0 &&
                      p.c_hi == 0.0 && p.claim.base == 0.0 && p.claim.slope == 0.0 &&
                      std::all_of(p.market.b.begin(), p.market.b.end(), [](double b) { return b == 0.0; });
    if (!fits)
      throw ValidationError("oracle",
                            "the closed form needs the exponential model without marks, C = {0}, b = 0 "
                            "and a claim per_jump * 1{tau <= T}");
  }
  const double tol = c.positive("tolerance", 5e-3);
  const bool transform = c.flag("transform", true);
  const double ttol = c.positive("transform_tolerance", 2e-2);
  const std::string second = c.str("second_backend", "none");
  if (second != "none" && second != "tree" && second != "lsmc")
    throw ValidationError("second_backend", "expected none, tree or lsmc, got '" + second + "'");
  const TimeGrid grid2(cm.grid.T, static_cast<int>(c.integer("second_M", cm.grid.M, 1, 100000)));
  const auto paths2 = static_cast<std::size_t>(c.integer("second_paths", static_cast<std::int64_t>(cm.paths), 2,
                                                         100000000));
  const double btol = c.positive("backend_tolerance", 2e-2);
  const auto mpaths = static_cast<std::size_t>(c.integer("martingale_paths", 0, 0, 100000000));
  if (mpaths == 1) throw ValidationError("martingale_paths", "need at least two paths");
  const double dt_factor = c.positive("martingale_dt_factor", 0.5);
  const bool zero_strategy = c.flag("check_zero_strategy", true);
  const int n_pert = static_cast<int>(c.integer("perturbations", 5, 0, 100));
  const auto shifts = c.list("perturbation_shifts", {0.5, -0.5, 0.8, -0.8, 0.0});
  if (n_pert > 0 && shifts.empty()) throw ValidationError("perturbation_shifts", "must not be empty");
  const double noise = c.number("perturbation_noise", 0.3);
  if (noise < 0.0) throw ValidationError("perturbation_noise", "must be non-negative");
  const bool monotone_c = c.flag("check_monotone_c", false);
  const double mtol = c.positive("monotone_tolerance", 1e-9);

  return [=]() {
    Outcome out = start(cm);
    UtilityOptions opts;
    opts.cascade = cm.cascade;
    opts.transform = transform;
    auto ctx = cm.backend == Backend::lsmc ? make_context(cm, cm.grid, cm.paths, cm.seed) : nullptr;
    const UtilitySolution s = solve_utility(p, opts, ctx);
    headline(out.report, "Y0", s.y0);
    headline(out.report, "V(x)", s.value);
    if (oracle == "closed_form") {
      const double lt = std::exp(-cm.lambda0 * cm.grid.T);
      const double exact = std::log(std::exp(p.alpha * p.claim.per_jump) * (1.0 - lt) + lt) / p.alpha;
      headline(out.report, "Y0_oracle", exact);
      check(out.report, "oracle_error", std::abs(s.y0 - exact), tol);
    }
    if (transform) {
      headline(out.report, "Y0_transformed", s.y0_transformed);
      check(out.report, "transform_gap", std::abs(s.y0 - s.y0_transformed), ttol);
    }
    if (second != "none") {
      const std::string tag = second;
      UtilityProblem p2 = p;
      p2.grid = grid2;
      UtilityOptions o2 = opts;
      o2.cascade.backend = parse_backend(second);
      auto ctx2 = o2.cascade.backend == Backend::lsmc ? make_context(cm, grid2, paths2, cm.seed + 2) : nullptr;
      const UtilitySolution s2 = solve_utility(p2, o2, ctx2);
      headline(out.report, "Y0_" + tag, s2.y0);
      check(out.report, "backend_gap", std::abs(s.y0 - s2.y0), btol);
      if (transform) {
        headline(out.report, "Y0_transformed_" + tag, s2.y0_transformed);
        check(out.report, "transform_gap_" + tag, std::abs(s2.y0 - s2.y0_transformed), ttol);
      }
    }
    if (mpaths > 0) {
      std::vector<StrategyPerturbation> strategies(1);
      if (zero_strategy) {
        StrategyPerturbation z;
        z.use_hat = false;
        strategies.push_back(z);
      }
      for (int k = 0; k < n_pert; ++k) {
        StrategyPerturbation q;
        q.shift = shifts[static_cast<std::size_t>(k) % shifts.size()];
        q.noise = noise;
        q.seed = cm.seed + 3 + static_cast<std::uint64_t>(k);
        strategies.push_back(q);
      }
      const auto reps = verify_martingale_optimality(p, *s.direct, strategies, mpaths, cm.seed + 1, cm.threads);
      const MartingaleReport& hat = reps[0];
      headline(out.report, "R0", hat.r0);
      headline(out.report, "E_RT", hat.mean_rt);
      headline(out.report, "stderr", hat.std_err);
      check(out.report, "martingale_gap", std::abs(hat.mean_rt - hat.r0),
            3.0 * hat.std_err + dt_factor * cm.grid.dt() * std::abs(hat.r0));
      std::size_t j = 1;
      if (zero_strategy) {
        headline(out.report, "E_RT_zero", reps[j].mean_rt);
        check(out.report, "zero_strategy_excess", reps[j].mean_rt - reps[j].r0, 3.0 * reps[j].std_err);
        ++j;
      }
      for (int k = 0; k < n_pert; ++k, ++j) {
        const std::string name = "perturbation_" + std::to_string(k + 1);
        headline(out.report, "E_RT_" + name, reps[j].mean_rt);
        check(out.report, name + "_excess", reps[j].mean_rt - reps[j].r0, 3.0 * reps[j].std_err);
      }
    }
    if (monotone_c) {
      UtilityProblem p0 = p;
      p0.c_lo = p0.c_hi = 0.0;
      UtilityOptions o0 = opts;
      o0.transform = false;
      const UtilitySolution s0 = solve_utility(p0, o0, ctx);
      headline(out.report, "Y0_no_trading", s0.y0);
      check(out.report, "monotone_c_excess", s.y0 - s0.y0, mtol);
    }
    std::ostringstream res;
    write_utility_csv(p, *s.direct, res);
    // Trailing summary; R0, E_RT and stderr stay empty without the martingale check.
    std::string line;
    for (const char* key : {"Y0", "V(x)", "R0", "E_RT", "stderr"}) {
      if (!line.empty()) line += ",";
      for (const auto& [k, v] : out.report.headline)
        if (k == key) line += fmt(v);
    }
    res << "Y0,V(x),R0,E_RT,stderr\n" << line << "\n";
    out.results = res.str();
    out.plot = cascade_plot(*s.direct);
    if (o.dump_brownian && ctx) out.brownian = simulate_brownian(cm.grid, cm.paths, cm.seed);
    return out;
  };
}

Plan plan_cascade(const Config& c, const RunOverrides& o) {
  std::vector<std::string> keys = kLinearKeys;
  keys.insert(keys.end(), {"residual_tolerance", "identity_paths", "oracle_tolerance", "results_stride"});
  require_keys(c, keys);
  const Common cm = parse_common(c, o, 10000, Backend::tree, MarkGrid::singleton());
  const LinearFamily fam = parse_linear(c);
  const ClaimSpec term = parse_terminal(c);
  const double res_tol = c.positive("residual_tolerance", cm.grid.dt());
  const double oracle_tol = c.positive("oracle_tolerance", cm.grid.dt());
  const auto id_paths = static_cast<std::size_t>(c.integer("identity_paths", 2000, 1, 100000000));
  const int stride = results_stride(c, cm.grid);
  return [=]() {
    Outcome out = start(cm);
    auto ctx = cm.backend == Backend::lsmc ? make_context(cm, cm.grid, cm.paths, cm.seed) : nullptr;
    const CascadeSolution sol =
        solve_cascade(claim_terminal(term), linear_driver(fam, *cm.model), cm.model, cm.grid, cm.cascade, ctx);
    const double y0 = sol.solution(History{}).y0();
    headline(out.report, "Y0", y0);
    headline(out.report, "sup_abs_Y", sol.sup_abs_y());

    const JumpSampler sampler(cm.model);
    const BrownianBatch batch = simulate_brownian(cm.grid, cm.paths, cm.seed + 1, scenario_kind(cm.backend));
    const ResidualStats rs = verify_bsde_residual(sol, batch, sampler, cm.seed + 1, cm.threads);
    headline(out.report, "residual_mean", rs.mean);
    headline(out.report, "residual_mean_abs", rs.mean_abs);
    headline(out.report, "residual_stderr", rs.std_err);
    check(out.report, "residual_mean_error", std::abs(rs.mean), 3.0 * rs.std_err + res_tol);

    double identity = 0.0;
    for (std::size_t p = 0; p < std::min(id_paths, cm.paths); ++p) {
      const auto jumps = sampler.sample(PathStream(cm.seed + 1, Stream::jumps, p));
      identity = std::max(identity, jump_identity_residual(glue(sol, jumps, batch.path(p))));
    }
    check(out.report, "jump_identity", identity, 1e-12);

    // With a = b = 0 and kappa = 1 the compensated jump term has zero mean, so
    // Y_0 = E[xi] + g T; estimated by plain simulation of xi.
    if (fam.a == 0.0 && fam.b == 0.0 && fam.kappa == 1.0) {
      const std::size_t chunks = chunk_count(cm.paths, 1024);
      std::vector<std::array<double, 2>> part(chunks, {0.0, 0.0});
      const double sqT = std::sqrt(cm.grid.T);
      parallel_chunks(cm.paths, 1024, cm.threads, [&](std::size_t ch, std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
          const auto jumps = sampler.sample(PathStream(cm.seed + 2, Stream::jumps, p));
          const double w = sqT * PathStream(cm.seed + 2, Stream::brownian, p).normal(0);
          const double xi = term(jumps.count_until(cm.grid.T), w);
          part[ch][0] += xi;
          part[ch][1] += xi * xi;
        }
      });
      double s1 = 0.0, s2 = 0.0;
      for (const auto& a : part) {
        s1 += a[0];
        s2 += a[1];
      }
      const double N = static_cast<double>(cm.paths);
      const double mean = s1 / N;
      const double se = std::sqrt(std::max(0.0, s2 / N - mean * mean) / (N - 1.0));
      const double oracle = mean + fam.g * cm.grid.T;
      headline(out.report, "Y0_simulated", oracle);
      headline(out.report, "Y0_simulated_stderr", se);
      check(out.report, "oracle_gap", std::abs(y0 - oracle), 3.0 * se + oracle_tol);
    }
    out.results = cascade_results(sol, stride);
    out.plot = cascade_plot(sol);
    if (o.dump_brownian) out.brownian = batch;
    return out;
  };
}

std::string short_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Plan plan_comparison(const Config& c, const RunOverrides& o) {
  std::vector<std::string> keys = kLinearKeys;
  keys.insert(keys.end(), {"deltas", "epsilon"});
  require_keys(c, keys);
  const Common cm = parse_common(c, o, 10000, Backend::tree, MarkGrid::singleton(), true);
  const LinearFamily fam = parse_linear(c);
  const ClaimSpec term = parse_terminal(c);
  const auto deltas = c.list("deltas", {0.01, 0.1});
  if (deltas.empty()) throw ValidationError("deltas", "must not be empty");
  for (double d : deltas)
    if (!(d >= 0.0)) throw ValidationError("deltas", "entries must be non-negative");
  const double eps = c.number("epsilon", 0.0);
  if (eps < 0.0) throw ValidationError("epsilon", "must be non-negative");
  return [=]() {
    Outcome out = start(cm);
    auto ctx = cm.backend == Backend::lsmc ? make_context(cm, cm.grid, cm.paths, cm.seed) : nullptr;
    const BrownianBatch scen = simulate_brownian(cm.grid, cm.paths, cm.seed + 1, scenario_kind(cm.backend));
    const ComparisonData lower{claim_terminal(term), linear_driver(fam, *cm.model)};
    std::ostringstream res;
    CsvWriter w(res, {"delta", "pass", "terminal_ordered", "driver_ordered", "min_gap", "nodes_checked",
                      "tolerance", "first_violation"});
    for (double d : deltas) {
      ClaimSpec up = term;
      up.base += d;
      up.bound += d;
      LinearFamily fu = fam;
      fu.g += eps;
      const ComparisonData upper{claim_terminal(up), linear_driver(fu, *cm.model)};
      const ComparisonVerdict v =
          comparison_harness(lower, upper, cm.model, cm.grid, cm.cascade, ctx, scen, cm.seed + 1);
      const std::string tag = short_number(d);
      headline(out.report, "min_gap_delta_" + tag, v.min_gap);
      headline(out.report, "nodes_checked_delta_" + tag, static_cast<double>(v.nodes_checked));
      check(out.report, "comparison_delta_" + tag, v.pass ? 0.0 : 1.0, 0.0);
      w.row({fmt(d), v.pass ? "1" : "0", v.terminal_ordered ? "1" : "0", v.driver_ordered ? "1" : "0",
             fmt(v.min_gap), std::to_string(v.nodes_checked), fmt(v.tolerance), v.first_violation});
    }
    out.results = res.str();
    if (o.dump_brownian) out.brownian = scen;
    return out;
  };
}

Plan plan(const Config& c, const RunOverrides& o) {
  const std::string e = c.str("experiment");
  if (e == "intro_example") return plan_intro(c, o);
  if (e == "compensator_check") return plan_compensator(c, o);
  if (e == "pricing") return plan_pricing(c, o);
  if (e == "utility") return plan_utility(c, o);
  if (e == "cascade") return plan_cascade(c, o);
  if (e == "comparison") return plan_comparison(c, o);
  throw ValidationError("experiment", "unknown experiment '" + e + "'");
}

void write_brownian(const std::filesystem::path& file, const BrownianBatch& b) {
  std::ofstream f(file, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + file.string() + "'");
  CsvWriter w(f, {"path", "step", "dW"});
  for (std::size_t p = 0; p < b.paths; ++p)
    for (int i = 0; i < b.grid.M; ++i) w.row({std::to_string(p), std::to_string(i), fmt(b.increment(p, i))});
}

}  // namespace

ExperimentReport evaluate_experiment(const Config& cfg, const RunOverrides& o) { return plan(cfg, o)().report; }

ExperimentReport run_experiment(const Config& cfg, const RunOverrides& o) {
  const Plan p = plan(cfg, o);
  Outcome out = p();
  const std::filesystem::path dir = out.report.output_dir;
  std::filesystem::create_directories(dir);
  write_text(dir / "results.csv", out.results);
  write_text(dir / "summary.json", summary_json(out.report, out.common));
  if (!out.plot.empty()) write_text(dir / "plot.csv", out.plot);
  if (out.brownian) write_brownian(dir / "brownian.csv", *out.brownian);
  return out.report;
}

}  // namespace cbsde
