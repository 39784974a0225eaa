#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "cascade_bsde/brownian_bsde.hpp"
#include "cascade_bsde/cascade.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/rng.hpp"

using namespace cbsde;

TEST_CASE("philox matches the published known answers") {
  using B = Philox4x32::Block;
  CHECK(Philox4x32(0)(B{0, 0, 0, 0}) == B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32(0xffffffffffffffffULL)(B{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}) ==
        B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32(0x299f31d0a4093822ULL)(B{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}) ==
        B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("path streams are pure functions of their address") {
  const PathStream a(5, Stream::brownian, 17), b(5, Stream::brownian, 17), c(5, Stream::jumps, 17);
  CHECK(a.normal(3) == b.normal(3));
  CHECK(a.normal(3) != c.normal(3));
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int p = 0; p < n; ++p) {
    const double z = PathStream(9, Stream::brownian, p).normal(0);
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  for (int k = 0; k < 1000; ++k) {
    const double u = a.uniform(k);
    CHECK((u > 0.0 && u < 1.0));
  }
}

TEST_CASE("jumps snap to the first node at or after tau") {
  const TimeGrid g(1.0, 100);
  CHECK(g.snap(0.0) == 0);
  CHECK(g.snap(0.015) == 2);
  CHECK(g.snap(0.02) == 2);
  CHECK(g.snap(1.0) == 100);
  CHECK(g.snap(1.5) == 101);
  CHECK(g.snap(kInf) == 101);
}

TEST_CASE("exponential model: survival and constant intensity") {
  const double lam = 0.5;
  const auto m = make_exponential_model(lam);
  for (double t : {0.0, 0.3, 1.0, 2.5}) {
    CHECK(marginal_gamma(*m, 0, t, {}, {}) == doctest::Approx(std::exp(-lam * t)).epsilon(1e-6));
    CHECK(intensity(*m, 1, t, 0, {}, {}).value == doctest::Approx(lam).epsilon(1e-6));
  }
}

TEST_CASE("product model: later jumps arrive at the same rate") {
  const auto m = make_product_exponential_model(2, 0.5);
  const std::vector<double> theta{0.3};
  const std::vector<int> marks{0};
  for (double t : {0.4, 0.8, 1.6})
    CHECK(intensity(*m, 2, t, 0, theta, marks).value == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("unordered jump times are rejected") {
  const auto m = make_product_exponential_model(2, 0.5);
  const std::vector<double> theta{0.6, 0.2};
  const std::vector<int> marks{0, 0};
  CHECK_THROWS_AS(marginal_gamma(*m, 2, 0.8, theta, marks), ValidationError);
}

TEST_CASE("tree: E[W_T^2] = T is exact on the lattice") {
  BrownianBsdeSpec s;
  s.grid = TimeGrid(2.0, 64);
  s.terminal = [](double x) { return x * x; };
  CHECK(solve_tree(s).y0() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("tree and linear solver agree with the discounted exponential") {
  const double r = 0.05, T = 1.0;
  BrownianBsdeSpec s;
  s.grid = TimeGrid(T, 200);
  s.terminal = [](double x) { return std::exp(x); };
  s.driver = [r](int, double, double y, double) { return -r * y; };
  s.driver_class = DriverClass::affine;
  s.lipschitz_y = r;
  const double exact = std::exp((0.5 - r) * T);
  CHECK(std::abs(solve_tree(s).y0() - exact) < 5e-3);

  LinearBsdeSpec l;
  l.grid = s.grid;
  l.a = [r](double, double) { return -r; };
  l.b = [](double, double) { return 0.0; };
  l.c = [](double, double) { return 0.0; };
  l.shape = LinearBsdeSpec::Terminal::exp_affine;
  l.k0 = 1.0;
  l.k1 = 1.0;
  CHECK(solve_linear(l).y0() == doctest::Approx(exact).epsilon(1e-9));
}

TEST_CASE("one-jump cascade recovers the default probability") {
  const double lam = 0.5, T = 1.0;
  DecomposedTerminal xi{[](const History& h, double) { return h.size() == 1 ? 1.0 : 0.0; }};
  DecomposedDriver f;
  f.f = [](const DriverArgs& a) {
    double s = 0.0;
    for (std::size_t e = 0; e < a.u.size(); ++e) s += a.lambda[e] * a.u[e];
    return s;
  };
  f.driver_class = DriverClass::lipschitz;
  f.lipschitz_y = lam;
  CascadeOptions o;
  o.compress_last_jump = true;
  const auto sol = solve_cascade(xi, f, make_exponential_model(lam), TimeGrid(T, 200), o);
  CHECK(std::abs(sol.solution(History{}).y0() - (1.0 - std::exp(-lam * T))) < 2e-3);

  std::ostringstream full, sparse;
  write_cascade_csv(sol, full);
  write_cascade_csv(sol, sparse, 4);
  std::set<std::string> rows;
  std::istringstream in(full.str());
  for (std::string line; std::getline(in, line);) rows.insert(line);
  std::istringstream sub(sparse.str());
  std::size_t kept = 0, missing = 0;
  for (std::string line; std::getline(sub, line); ++kept) missing += rows.count(line) == 0;
  CHECK(missing == 0);
  CHECK(kept * 8 < rows.size());
  CHECK_THROWS_AS(write_cascade_csv(sol, sparse, 0), ValidationError);
}
