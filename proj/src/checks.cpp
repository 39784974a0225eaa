#include "cascade_bsde/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "cascade_bsde/brownian_bsde.hpp"
#include "cascade_bsde/cascade.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/pricing.hpp"
#include "cascade_bsde/rng.hpp"
#include "cascade_bsde/scenario.hpp"
#include "cascade_bsde/utility.hpp"

namespace cbsde {

std::vector<std::string> check_suites() { return {"jump_model", "bsde", "cascade", "applications"}; }

namespace {

struct Measure {
  Measure(double v, double tol, std::string d = {}) : value(v), tolerance(tol), detail(std::move(d)) {}
  double value;
  double tolerance;
  std::string detail;
};

class Recorder {
 public:
  Recorder(std::string suite, std::vector<InvariantResult>& out) : suite_(std::move(suite)), out_(out) {}

  // fn returns (value, tolerance); the invariant holds when value <= tolerance.
  void run(const std::string& name, const std::function<Measure()>& fn) {
    InvariantResult r;
    r.suite = suite_;
    r.name = name;
    try {
      const Measure m = fn();
      r.value = m.value;
      r.tolerance = m.tolerance;
      r.detail = m.detail;
      r.pass = m.value <= m.tolerance;
    } catch (const std::exception& e) {
      r.pass = false;
      r.value = std::numeric_limits<double>::quiet_NaN();
      r.detail = std::string("exception: ") + e.what();
    }
    out_.push_back(std::move(r));
  }

  void near(const std::string& name, const std::function<double()>& got, double want, double tol) {
    run(name, [&] { return Measure{std::abs(got() - want), tol}; });
  }

  // Holds when fn throws ValidationError.
  void rejects(const std::string& name, const std::function<void()>& fn) {
    run(name, [&] {
      try {
        fn();
      } catch (const ValidationError& e) {
        return Measure{0.0, 0.0, e.what()};
      }
      return Measure{1.0, 0.0, "accepted"};
    });
  }

 private:
  std::string suite_;
  std::vector<InvariantResult>& out_;
};

// ---------------------------------------------------------------- jump_model

void suite_jump_model(const CheckOptions& o, Recorder& r) {
  const double lam = 0.5;
  const auto expo = make_exponential_model(lam);
  const auto marked = make_exponential_model(lam, MarkGrid({0.0, 1.0}, {1.0, 1.0}));
  const auto prod = make_product_exponential_model(2, lam, MarkGrid({0.0, 1.0}, {1.0, 1.0}));
  const TimeGrid grid(1.0, o.M);

  r.near("marginal_gamma_t1", [&] { return marginal_gamma(*expo, 0, 1.0, {}, {}); }, std::exp(-lam), 1e-6);
  r.near("marginal_gamma_t0", [&] { return marginal_gamma(*expo, 0, 0.0, {}, {}); }, 1.0, 1e-12);
  r.run("product_marginal", [&] {
    const double th[] = {0.3};
    const int mk[] = {1};
    // lambda0^2 e^{-lambda0 theta_2} integrated over theta_2 > t, times q(e) = 1/2.
    const double want = lam * std::exp(-lam * 0.7) * 0.5;
    return Measure{std::abs(marginal_gamma(*prod, 1, 0.7, th, mk) - want), 1e-6};
  });
  r.near("normalization", [&] { return quadrature_mass(*expo, 40.0, 1e-3); }, -std::expm1(-lam * 40.0), 1e-6);
  r.run("intensity_constant", [&] {
    const IntensityRow row = intensity_row(*expo, grid, {}, {});
    double worst = 0.0;
    for (int i = 0; i <= grid.M; ++i) worst = std::max(worst, std::abs(row.at(i, 0) - lam));
    return Measure{worst, 1e-6};
  });
  r.run("intensity_marked_total", [&] {
    const IntensityRow row = intensity_row(*marked, grid, {}, {});
    double worst = 0.0;
    for (int i = 0; i <= grid.M; ++i) worst = std::max(worst, std::abs(row.at(i, 0) + row.at(i, 1) - lam));
    return Measure{worst, 1e-6};
  });
  r.run("intensity_nonnegative_bounded", [&] {
    double worst = 0.0;
    const double bound = prod->intensity_bound();
    for (int j = 0; j <= grid.M; j += 5)
      for (int e = 0; e < 2; ++e) {
        const double th[] = {grid.t(j)};
        const int mk[] = {e};
        const IntensityRow row = intensity_row(*prod, grid, th, mk);
        for (double v : row.values)
          if (!(v >= 0.0) || !std::isfinite(v)) worst = kInf;
        for (int i = row.start; i <= grid.M; ++i) worst = std::max(worst, row.at(i, 0) + row.at(i, 1) - bound);
      }
    return Measure{worst, 1e-6};
  });
  r.rejects("unordered_theta_rejected", [&] {
    const double th[] = {0.5, 0.2};
    const int mk[] = {0, 0};
    marginal_gamma(*prod, 2, 0.6, th, mk);
  });
  r.rejects("level_out_of_range_rejected", [&] { marginal_gamma(*expo, 2, 0.6, {}, {}); });
  r.run("samples_ordered_on_grid", [&] {
    const JumpSampler sampler(prod);
    double bad = 0.0;
    for (std::size_t p = 0; p < std::min<std::size_t>(o.paths, 20000); ++p) {
      const auto s = sampler.sample(PathStream(o.seed, Stream::jumps, p));
      for (std::size_t k = 0; k < s.times.size(); ++k) {
        if (k > 0 && s.times[k] < s.times[k - 1]) bad += 1.0;
        if (std::isfinite(s.times[k]) && (s.marks[k] < 0 || s.marks[k] >= 2)) bad += 1.0;
      }
    }
    return Measure{bad, 0.0};
  });
  r.run("compensator_unit", [&] {
    const auto res = compensator_check(JumpSampler(expo), [](double, int, const MarkedJumpSample&) { return 1.0; },
                                       1.0, o.paths, o.seed, o.threads);
    return Measure{std::abs(res.lhs - res.rhs), 3.0 * res.std_err};
  });
  r.run("compensator_unit_exact", [&] {
    const auto res = compensator_check(JumpSampler(expo), [](double, int, const MarkedJumpSample&) { return 1.0; },
                                       1.0, o.paths, o.seed, o.threads);
    const double exact = -std::expm1(-lam);
    return Measure{std::max(std::abs(res.lhs - exact), std::abs(res.rhs - exact)), 3.0 * res.std_err};
  });
  r.run("compensator_time_marked", [&] {
    const auto res = compensator_check(
        JumpSampler(prod), [](double t, int e, const MarkedJumpSample&) { return t * (1.0 + e); }, 1.0, o.paths,
        o.seed + 1, o.threads);
    return Measure{std::abs(res.lhs - res.rhs), 3.0 * res.std_err};
  });
}

// ---------------------------------------------------------------------- bsde

void suite_bsde(const CheckOptions& o, Recorder& r) {
  r.run("philox_known_answers", [] {
    struct Kat {
      std::uint64_t key;
      Philox4x32::Block ctr, want;
    };
    const Kat kats[] = {
        {0, {0, 0, 0, 0}, {0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}},
        {~std::uint64_t{0},
         {0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
         {0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}},
        {0x299f31d0a4093822ULL,
         {0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
         {0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}},
    };
    double bad = 0.0;
    for (const auto& k : kats)
      if (Philox4x32(k.key)(k.ctr) != k.want) bad += 1.0;
    return Measure{bad, 0.0};
  });
  const TimeGrid grid(1.0, o.M);
  BrownianBsdeSpec disc;
  disc.grid = grid;
  disc.terminal = [](double) { return 1.0; };
  disc.driver = [](int, double, double y, double) { return -0.03 * y; };
  disc.driver_class = DriverClass::affine;
  disc.lipschitz_y = 0.03;
  r.near("tree_discount", [&] { return solve_tree(disc).y0(); }, std::exp(-0.03), 1e-4);
  r.near("linear_discount", [&] {
    LinearBsdeSpec ls;
    ls.grid = grid;
    ls.a = [](double, double) { return -0.03; };
    ls.k0 = 1.0;
    return solve_linear(ls).y0();
  }, std::exp(-0.03), 1e-12);

  BrownianBsdeSpec cosine;
  cosine.grid = grid;
  cosine.terminal = [](double x) { return std::cos(x); };
  cosine.terminal_bound = 1.0;
  r.near("tree_cosine", [&] { return solve_tree(cosine).y0(); }, std::exp(-0.5), 2e-3);
  r.run("lsmc_cosine", [&] {
    auto ctx = std::make_shared<const LsmcContext>(simulate_brownian(grid, o.paths, o.seed), 3, o.threads);
    const BsdeSolution s = solve_lsmc(cosine, ctx);
    return Measure{std::abs(s.y0() - std::exp(-0.5)), 3.0 * s.diagnostics().y0_stderr + 1e-3};
  });
  r.run("lsmc_thread_invariance", [&] {
    auto c1 = std::make_shared<const LsmcContext>(simulate_brownian(grid, o.paths, o.seed), 3, 1);
    auto c3 = std::make_shared<const LsmcContext>(simulate_brownian(grid, o.paths, o.seed), 3, 3);
    BrownianBsdeSpec s = cosine;
    s.driver = [](int, double, double y, double z) { return 0.2 * std::sin(y) + 0.1 * z; };
    s.driver_class = DriverClass::lipschitz;
    s.lipschitz_y = 0.2;
    s.lipschitz_z = 0.1;
    const double a = solve_lsmc(s, c1).y0(), b = solve_lsmc(s, c3).y0();
    return Measure{a == b ? 0.0 : std::abs(a - b) + 1e-300, 0.0};
  });
  r.run("tree_z_of_linear_terminal", [&] {
    BrownianBsdeSpec s;
    s.grid = grid;
    s.terminal = [](double x) { return x; };
    const BsdeSolution sol = solve_tree(s);
    double worst = 0.0;
    for (int i = 0; i < grid.M; ++i)
      for (int m = 0; m <= i; ++m) worst = std::max(worst, std::abs(sol.tree_z(i, m) - 1.0));
    return Measure{worst, 1e-12};
  });
  BrownianBsdeSpec lip;
  lip.grid = grid;
  lip.terminal = [](double x) { return std::tanh(x); };
  lip.terminal_bound = 1.0;
  lip.driver = [](int, double, double y, double z) { return 0.5 * std::sin(y) + 0.2 * z + 0.1; };
  lip.driver_class = DriverClass::lipschitz;
  lip.lipschitz_y = 0.5;
  lip.lipschitz_z = 0.2;
  r.run("a_priori_bound", [&] {
    const BsdeSolution s = solve_tree(lip);
    return Measure{s.diagnostics().sup_y - s.diagnostics().a_priori_bound, 0.0};
  });
  r.run("picard_converges", [&] {
    SolverOptions so;
    so.picard = true;
    const BsdeSolution s = solve_tree(lip, so);
    return Measure{static_cast<double>(s.diagnostics().picard_iterations), static_cast<double>(so.picard_max - 1)};
  });
  r.run("monotone_guard_rejects", [&] {
    BrownianBsdeSpec s = lip;
    s.lipschitz_y = 10.0 * grid.M;
    SolverOptions so;
    so.monotone_guard = true;
    try {
      solve_tree(s, so);
    } catch (const BoundViolation& e) {
      return Measure{0.0, 0.0, e.what()};
    }
    return Measure{1.0, 0.0, "accepted a non-monotone step"};
  });
  r.run("batch_reproducible", [&] {
    const BrownianBatch a = simulate_brownian(grid, 100, o.seed);
    const BrownianBatch b = simulate_brownian(grid, 100, o.seed);
    double bad = 0.0;
    for (std::size_t p = 0; p < 100; ++p)
      for (int i = 0; i < grid.M; ++i)
        if (a.increment(p, i) != b.increment(p, i)) bad += 1.0;
    return Measure{bad, 0.0};
  });
  r.rejects("quadratic_needs_z_clip", [&] {
    BrownianBsdeSpec s = lip;
    s.driver_class = DriverClass::quadratic_z;
    auto ctx = std::make_shared<const LsmcContext>(simulate_brownian(grid, 100, o.seed), 2, o.threads);
    solve_lsmc(s, ctx);
  });
}

// ------------------------------------------------------------------- cascade

struct Fixture {
  DecomposedTerminal terminal;
  DecomposedDriver driver;
};

// Two jumps, two marks; data depend on the full history.
Fixture structural_fixture(const DensityModel& model, double shift = 0.0) {
  Fixture f;
  f.terminal.xi = [shift](const History& h, double x) {
    double v = 0.3 * h.size() + 0.5 * std::sin(x) + shift;
    for (int j = 0; j < h.size(); ++j) v += 0.2 * h.marks[j] - 0.004 * h.theta[j];
    return v;
  };
  f.driver.driver_class = DriverClass::affine;
  f.driver.f = [](const DriverArgs& a) {
    double jump = 0.0;
    for (std::size_t e = 0; e < a.u.size(); ++e) jump += a.marks->weights[e] * a.lambda[e] * a.u[e];
    return -0.05 * a.y + 0.1 * a.z + 0.5 * jump + 0.01 * a.k;
  };
  f.driver.lipschitz_y = 0.05 + 0.5 * model.intensity_bound();
  f.driver.lipschitz_z = 0.1;
  return f;
}

void suite_cascade(const CheckOptions& o, Recorder& r) {
  const TimeGrid grid(1.0, o.M);
  const auto model = make_product_exponential_model(2, 0.5, MarkGrid({0.0, 1.0}, {1.0, 1.0}));
  const Fixture fx = structural_fixture(*model);
  const double cap = 5.0;
  CascadeOptions opts;
  opts.cap = cap;
  opts.solver.picard = true;
  opts.threads = o.threads;
  const CascadeSolution sol = solve_cascade(fx.terminal, fx.driver, model, grid, opts);
  const JumpSampler sampler(model);
  const BrownianBatch batch = simulate_brownian(grid, o.paths, o.seed, IncrementKind::rademacher);
  const std::size_t scen = std::min<std::size_t>(o.paths, 4000);
  const std::size_t E = model->marks().size();

  r.run("adaptedness", [&] {
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::size_t p = 0; p < scen; ++p) {
      const auto jumps = sampler.sample(PathStream(o.seed, Stream::jumps, p));
      const auto W = batch.path(p);
      const GluedPath base = glue(sol, jumps, W);
      for (int j = 0; j < model->n(); ++j) {
        if (!(jumps.times[j] <= grid.T)) break;
        // Delay jump j and later ones by at least two steps and flip their marks.
        MarkedJumpSample moved = jumps;
        const double delay = 2.5 * grid.dt() + 0.3 * PathStream(o.seed, Stream::perturbation, p).uniform(j);
        for (int k = j; k < model->n(); ++k) {
          moved.times[k] += delay;
          if (moved.marks[k] >= 0) moved.marks[k] = 1 - moved.marks[k];
        }
        const GluedPath alt = glue(sol, moved, W);
        const int s = grid.snap(jumps.times[j]);
        for (int i = 0; i < s; ++i) {
          worst = std::max({worst, std::abs(base.Y[i] - alt.Y[i]), std::abs(base.Y_left[i] - alt.Y_left[i])});
        }
        for (int i = 0; i <= s && i <= grid.M; ++i) {
          worst = std::max(worst, std::abs(base.Z[i] - alt.Z[i]));
          for (std::size_t e = 0; e < E; ++e) worst = std::max(worst, std::abs(base.u(i, e) - alt.u(i, e)));
        }
        ++compared;
      }
    }
    return Measure{worst, 0.0, std::to_string(compared) + " perturbed scenarios"};
  });
  r.run("jump_identity", [&] {
    double worst = 0.0;
    for (std::size_t p = 0; p < scen; ++p)
      worst = std::max(worst, jump_identity_residual(
                                  glue(sol, sampler.sample(PathStream(o.seed, Stream::jumps, p)), batch.path(p))));
    return Measure{worst, 0.0};
  });
  r.run("glued_sup_bound", [&] {
    double sup = 0.0;
    for (std::size_t p = 0; p < scen; ++p) {
      const GluedPath g = glue(sol, sampler.sample(PathStream(o.seed, Stream::jumps, p)), batch.path(p));
      for (double y : g.Y) sup = std::max(sup, std::abs(y));
    }
    return Measure{sup, (model->n() + 1) * cap};
  });
  r.run("level_cap", [&] { return Measure{sol.sup_abs_y(), cap}; });
  r.run("u_zero_after_last_jump", [&] {
    double worst = 0.0;
    std::size_t hits = 0;
    for (std::size_t p = 0; p < scen; ++p) {
      const auto jumps = sampler.sample(PathStream(o.seed, Stream::jumps, p));
      if (!(jumps.times.back() <= grid.T)) continue;
      ++hits;
      const GluedPath g = glue(sol, jumps, batch.path(p));
      const int last = grid.snap(jumps.times.back());
      for (int i = last + 1; i <= grid.M; ++i)
        for (std::size_t e = 0; e < E; ++e) worst = std::max(worst, std::abs(g.u(i, e)));
      for (int i = last; i < grid.M; ++i)
        for (double u : g.u_step(i)) worst = std::max(worst, std::abs(u));
    }
    return Measure{worst, 0.0, std::to_string(hits) + " scenarios with every jump before T"};
  });
  r.run("no_jump_is_level_zero", [&] {
    double worst = 0.0;
    const BsdeSolution& s0 = sol.solution(History{});
    for (std::size_t p = 0; p < scen; ++p) {
      const auto jumps = sampler.sample(PathStream(o.seed, Stream::jumps, p));
      if (jumps.times[0] <= grid.T) continue;
      const auto W = batch.path(p);
      const GluedPath g = glue(sol, jumps, W);
      for (int i = 0; i <= grid.M; ++i) worst = std::max(worst, std::abs(g.Y[i] - s0.y(i, W[i])));
    }
    return Measure{worst, 0.0};
  });
  r.run("bsde_residual", [&] {
    const ResidualStats rs = verify_bsde_residual(sol, batch, sampler, o.seed, o.threads);
    return Measure{rs.mean_abs, 1e-6};
  });
  r.run("jump_free_data", [&] {
    const auto one = make_exponential_model(0.5);
    const DecomposedTerminal t{[](const History&, double x) { return std::cos(x); }};
    const CascadeSolution s = solve_cascade(t, DecomposedDriver{}, one, grid, CascadeOptions{});
    const JumpSampler js(one);
    double worst = 0.0;
    for (std::size_t p = 0; p < std::min<std::size_t>(scen, 1000); ++p) {
      const GluedPath g = glue(s, js.sample(PathStream(o.seed, Stream::jumps, p)), batch.path(p));
      for (double u : g.U) worst = std::max(worst, std::abs(u));
    }
    return Measure{worst, 1e-12};
  });
  r.run("intro_example", [&] {
    const auto m = make_exponential_model(0.5, MarkGrid({0.0, 1.0}, {1.0, 1.0}));
    const DecomposedTerminal t{[](const History& h, double) { return h.size() == 0 ? 1.0 : 0.0; }};
    DecomposedDriver d;
    d.driver_class = DriverClass::affine;
    d.f = [](const DriverArgs& a) { return a.u[0] + a.u[1]; };
    d.lipschitz_y = 2.0;
    const CascadeSolution s = solve_cascade(t, d, m, grid, CascadeOptions{});
    return Measure{std::abs(s.solution(History{}).y0() - std::exp(-2.0)), 2e-2};
  });

  // Comparison fixture: (xi, f) against (xi + delta, f). The injected fault
  // flips delta, which must make this invariant fail.
  const double delta = o.inject_fault ? -0.1 : 0.1;
  CascadeOptions copts;
  copts.solver.monotone_guard = true;
  copts.threads = o.threads;
  const Fixture up = structural_fixture(*model, delta);
  const BrownianBatch cmp_batch = simulate_brownian(grid, std::min<std::size_t>(o.paths, 2000), o.seed + 1,
                                                    IncrementKind::rademacher);
  r.run("comparison_order", [&] {
    const ComparisonVerdict v = comparison_harness({fx.terminal, fx.driver}, {up.terminal, up.driver}, model, grid,
                                                   copts, nullptr, cmp_batch, o.seed + 1);
    return Measure{v.pass ? 0.0 : 1.0, 0.0,
                   v.pass ? std::to_string(v.nodes_checked) + " nodes" : "violation: " + v.first_violation};
  });
  r.run("comparison_negative_control", [&] {
    const Fixture down = structural_fixture(*model, -0.1);
    const ComparisonVerdict v = comparison_harness({fx.terminal, fx.driver}, {down.terminal, down.driver}, model,
                                                   grid, copts, nullptr, cmp_batch, o.seed + 1);
    const bool named = !v.pass && !v.first_violation.empty();
    return Measure{named ? 0.0 : 1.0, 0.0, named ? "rejected: " + v.first_violation : "not rejected"};
  });
  r.run("comparison_lsmc", [&] {
    const auto one = make_exponential_model(0.5);
    const DecomposedTerminal lo{[](const History& h, double x) { return 0.5 * h.size() + std::sin(x); }};
    const DecomposedTerminal hi{[](const History& h, double x) { return 0.5 * h.size() + std::sin(x) + 0.1; }};
    DecomposedDriver d;
    d.driver_class = DriverClass::affine;
    d.f = [](const DriverArgs& a) { return -0.05 * a.y + 0.5 * a.lambda[0] * a.u[0]; };
    d.lipschitz_y = 0.3;
    CascadeOptions lo_opts;
    lo_opts.backend = Backend::lsmc;
    lo_opts.threads = o.threads;
    auto ctx = std::make_shared<const LsmcContext>(simulate_brownian(grid, o.paths, o.seed), 3, o.threads);
    const BrownianBatch sc = simulate_brownian(grid, 2000, o.seed + 1);
    const ComparisonVerdict v = comparison_harness({lo, d}, {hi, d}, one, grid, lo_opts, ctx, sc, o.seed + 1);
    return Measure{v.pass ? 0.0 : 1.0, 0.0, v.pass ? "" : v.first_violation};
  });
}

// -------------------------------------------------------------- applications

void suite_applications(const CheckOptions& o, Recorder& r) {
  const TimeGrid grid(1.0, o.M);
  const auto model = make_exponential_model(0.5);
  auto pricing = [&](Payoff::Kind kind, double r0, double r1) {
    PricingProblem p;
    p.market.pre = {r0, 0.05, 0.2, 0.04, 0.2};
    p.market.post = {r1, 0.05, 0.2, 0.04, 0.2};
    p.market.beta = -0.3;
    p.payoff0.kind = p.payoff1.kind = kind;
    p.model = model;
    p.grid = grid;
    return p;
  };
  r.run("pricing_constant_claim", [&] {
    PricingProblem p = pricing(Payoff::Kind::constant, 0.0, 0.0);
    p.market.pre.bbar = p.market.pre.b;
    const ClosedFormPrice cf(p);
    double worst = 0.0;
    for (double t : {0.0, 0.4, 0.9})
      for (double w : {-1.0, 0.0, 0.7})
        worst = std::max({worst, std::abs(cf.y0(t, w) - 1.0), std::abs(cf.y1(t, w, t) - 1.0)});
    return Measure{worst, 1e-12};
  });
  r.run("pricing_discount", [&] {
    const ClosedFormPrice cf(pricing(Payoff::Kind::constant, 0.01, 0.03));
    double worst = 0.0;
    for (double t : {0.0, 0.5, 1.0}) worst = std::max(worst, std::abs(cf.y1(t, 0.3, 0.2) - std::exp(-0.03 * (1 - t))));
    return Measure{worst, 1e-12};
  });
  r.run("pricing_tree_vs_closed_form", [&] {
    PricingProblem p = pricing(Payoff::Kind::put, 0.01, 0.02);
    const CascadeSolution s =
        solve_cascade(pricing_terminal(p), pricing_driver(p), model, grid, CascadeOptions{});
    return Measure{std::abs(s.solution(History{}).y0() - ClosedFormPrice(p).y0(0.0, 0.0)), 1e-2};
  });
  r.run("hedge_identity", [&] {
    const HedgeReport h = simulate_hedge(ClosedFormPrice(pricing(Payoff::Kind::put, 0.01, 0.02)),
                                         std::min<std::size_t>(o.paths, 2000), o.seed, o.threads);
    return Measure{h.max_identity_residual, 1e-10};
  });
  r.run("hedge_without_jump_exposure", [] {
    const HedgeRatios h = extract_hedge(1.0, 0.3, 0.0, -0.3, 0.2, 0.25, 1.0, 1.2, 0.9);
    return Measure{std::abs(h.pi1) + std::abs(h.pi2 - 0.3 / (0.25 * 0.9)), 1e-14};
  });
  r.rejects("zero_beta_rejected", [&] {
    PricingProblem p = pricing(Payoff::Kind::digital, 0.01, 0.02);
    p.market.beta = 0.0;
    p.validate();
  });

  const double u1[] = {0.4}, beta1[] = {-0.2}, lam1[] = {0.5}, w1[] = {1.0};
  HamiltonianInput hin;
  hin.alpha = 1.5;
  hin.sigma = 0.3;
  hin.vartheta = 0.1 / 0.3;
  hin.z = 0.2;
  hin.u = u1;
  hin.beta = beta1;
  hin.lambda = lam1;
  hin.weights = w1;
  hin.c_lo = -1.0;
  hin.c_hi = 1.0;
  r.run("hamiltonian_vertex", [&] {
    HamiltonianInput in = hin;
    const double zero[] = {0.0};
    in.lambda = zero;
    const double want = std::clamp((in.z + in.vartheta / in.alpha) / in.sigma, in.c_lo, in.c_hi);
    const auto gs = golden_section_min([&](double pi) { return hamiltonian(in, pi); }, in.c_lo, in.c_hi);
    return Measure{std::max(std::abs(minimize_hamiltonian(in).pi - want), std::abs(gs.argmin - want)), 1e-7};
  });
  r.run("hamiltonian_no_trading", [&] {
    HamiltonianInput in = hin;
    in.c_lo = in.c_hi = 0.0;
    const double want = 0.5 * in.alpha * in.z * in.z + std::expm1(in.alpha * u1[0]) / in.alpha * lam1[0];
    return Measure{std::abs(minimize_hamiltonian(in).driver - want), 1e-12};
  });
  r.run("hamiltonian_grid_search", [&] {
    double best = kInf;
    for (int j = 0; j <= 10000; ++j) best = std::min(best, hamiltonian(hin, -1.0 + 2.0 * j / 10000.0));
    return Measure{std::abs(minimize_hamiltonian(hin).value - best), 1e-6};
  });
  r.run("hamiltonian_argmin_scaling", [&] {
    const auto a = golden_section_min([&](double pi) { return hamiltonian(hin, pi); }, -1.0, 1.0);
    const auto b = golden_section_min([&](double pi) { return 2.0 * hamiltonian(hin, pi); }, -1.0, 1.0);
    return Measure{std::abs(a.argmin - b.argmin), 1e-7};
  });

  UtilityProblem up;
  up.alpha = 1.0;
  up.c_lo = -1.0;
  up.c_hi = 1.0;
  up.market.b = {0.1};
  up.market.sigma = {0.3};
  up.market.beta = {{-0.2}};
  up.claim.per_jump = 1.0;
  up.model = model;
  up.grid = grid;
  UtilityOptions uo;
  uo.cascade.compress_last_jump = true;
  uo.cascade.threads = o.threads;
  r.run("utility_nothing_to_hedge", [&] {
    UtilityProblem p = up;
    p.market.b = {0.0};
    p.market.beta = {{0.0}};
    p.claim.per_jump = 0.0;
    UtilityOptions q = uo;
    q.transform = false;
    return Measure{std::abs(solve_utility(p, q).y0), 1e-12};
  });
  r.run("utility_inaction_admissible", [&] {
    UtilityProblem p = up;
    p.market.b = {0.0};
    p.claim.per_jump = 0.0;
    UtilityOptions q = uo;
    q.transform = false;
    return Measure{solve_utility(p, q).y0, 1e-12};
  });
  r.run("utility_closed_form", [&] {
    UtilityProblem p = up;
    p.market.b = {0.0};
    p.c_lo = p.c_hi = 0.0;
    UtilityOptions q = uo;
    q.transform = false;
    const double want = std::log(std::numbers::e * (1.0 - std::exp(-0.5)) + std::exp(-0.5));
    return Measure{std::abs(solve_utility(p, q).y0 - want), 1e-2};
  });
  const UtilitySolution us = solve_utility(up, uo);
  r.run("utility_transform_consistency", [&] { return Measure{std::abs(us.y0 - us.y0_transformed), 2e-2}; });
  r.run("utility_monotone_in_c", [&] {
    UtilityProblem p = up;
    p.c_lo = p.c_hi = 0.0;
    UtilityOptions q = uo;
    q.transform = false;
    return Measure{us.y0 - solve_utility(p, q).y0, 0.0};
  });
  std::vector<StrategyPerturbation> st(3);
  st[1].use_hat = false;
  st[2].shift = 0.5;
  st[2].noise = 0.3;
  st[2].seed = o.seed;
  const auto reps = verify_martingale_optimality(up, *us.direct, st, o.paths, o.seed, o.threads);
  r.run("martingale_optimal", [&] {
    return Measure{std::abs(reps[0].mean_rt - reps[0].r0),
                   3.0 * reps[0].std_err + 0.5 * grid.dt() * std::abs(reps[0].r0)};
  });
  r.run("supermartingale_zero", [&] {
    return Measure{reps[1].mean_rt - reps[1].r0, 3.0 * reps[1].std_err};
  });
  r.run("supermartingale_perturbed", [&] {
    return Measure{reps[2].mean_rt - reps[2].r0, 3.0 * reps[2].std_err};
  });
}

}  // namespace

std::vector<InvariantResult> run_checks(const std::string& suite, const CheckOptions& opts) {
  const auto names = check_suites();
  if (suite != "all" && std::find(names.begin(), names.end(), suite) == names.end())
    throw ValidationError("suite", "expected all, jump_model, bsde, cascade or applications, got '" + suite + "'");
  if (opts.M < 2) throw ValidationError("M", "must be at least 2");
  if (opts.paths < 100) throw ValidationError("paths", "must be at least 100");
  std::vector<InvariantResult> out;
  for (const auto& name : names) {
    if (suite != "all" && suite != name) continue;
    Recorder r(name, out);
    if (name == "jump_model") suite_jump_model(opts, r);
    if (name == "bsde") suite_bsde(opts, r);
    if (name == "cascade") suite_cascade(opts, r);
    if (name == "applications") suite_applications(opts, r);
  }
  return out;
}

void print_check_table(std::span<const InvariantResult> results, std::ostream& out) {
  std::size_t width = 9;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::size_t failed = 0;
  out << std::left << std::setw(13) << "suite" << std::setw(static_cast<int>(width) + 2) << "invariant"
      << std::setw(6) << "result" << std::setw(14) << "value" << std::setw(14) << "tolerance" << "detail\n";
  for (const auto& r : results) {
    if (!r.pass) ++failed;
    std::ostringstream v, t;
    v << std::setprecision(4) << r.value;
    t << std::setprecision(4) << r.tolerance;
    out << std::left << std::setw(13) << r.suite << std::setw(static_cast<int>(width) + 2) << r.name
        << std::setw(6) << (r.pass ? "PASS" : "FAIL") << std::setw(14) << v.str() << std::setw(14) << t.str()
        << r.detail << "\n";
  }
  out << (failed == 0 ? "PASS" : "FAIL") << ": " << results.size() - failed << "/" << results.size()
      << " invariants hold\n";
}

}  // namespace cbsde
