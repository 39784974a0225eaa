#include "cascade_bsde/utility.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cascade_bsde/csv.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/parallel.hpp"

namespace cbsde {

double ClaimSpec::operator()(int k, double x) const {
  return std::clamp(base + per_jump * k + slope * x, -bound, bound);
}

void UtilityProblem::validate() const {
  if (!(alpha > 0.0)) throw ValidationError("alpha", "must be positive");
  if (!(c_lo <= 0.0 && 0.0 <= c_hi) || !std::isfinite(c_lo) || !std::isfinite(c_hi))
    throw ValidationError("c_lo", "the constraint set must be a compact interval containing 0");
  if (!model) throw ValidationError("model", "density model is required");
  market.validate(model->marks().size());
  if (!(claim.bound > 0.0)) throw ValidationError("claim_bound", "must be positive");
  if (!(z_clip > 0.0)) throw ValidationError("z_clip", "must be positive");
}

int UtilityProblem::regime(int k) const { return std::min(k, static_cast<int>(market.b.size()) - 1); }

MinimizeResult golden_section_min(const std::function<double(double)>& fn, double lo, double hi, double tol) {
  if (hi - lo <= tol) {
    const double m = 0.5 * (lo + hi);
    return {m, fn(m)};
  }
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = fn(c), fd = fn(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = fn(d);
    }
  }
  MinimizeResult best{0.5 * (a + b), fn(0.5 * (a + b))};
  // The interval ends are admissible minimizers of a convex function too.
  for (double e : {lo, hi}) {
    const double fe = fn(e);
    if (fe < best.value) best = {e, fe};
  }
  return best;
}

double hamiltonian(const HamiltonianInput& in, double pi) {
  const double dev = pi * in.sigma - in.z - in.vartheta / in.alpha;
  double v = 0.5 * in.alpha * dev * dev;
  for (std::size_t e = 0; e < in.lambda.size(); ++e)
    if (in.lambda[e] != 0.0)
      v += in.weights[e] * std::expm1(in.alpha * (in.u[e] - pi * in.beta[e])) / in.alpha * in.lambda[e];
  return v;
}

namespace {

bool jump_free(const HamiltonianInput& in) {
  for (double l : in.lambda)
    if (l != 0.0) return false;
  return true;
}

}  // namespace

HamiltonianResult minimize_hamiltonian(const HamiltonianInput& in) {
  if (jump_free(in)) {
    const double pi = std::clamp((in.z + in.vartheta / in.alpha) / in.sigma, in.c_lo, in.c_hi);
    const double v = hamiltonian(in, pi);
    return {pi, v, v - in.vartheta * in.z - in.vartheta * in.vartheta / (2.0 * in.alpha)};
  }
  const auto m = golden_section_min([&](double pi) { return hamiltonian(in, pi); }, in.c_lo, in.c_hi);
  return {m.argmin, m.value, m.value - in.vartheta * in.z - in.vartheta * in.vartheta / (2.0 * in.alpha)};
}

HamiltonianResult minimize_transformed(const HamiltonianInput& in, double y) {
  const double a = in.alpha;
  auto G = [&](double pi) {
    const double ps = pi * in.sigma;
    double v = 0.5 * a * a * ps * ps * y - a * ps * (in.z + in.vartheta * y);
    for (std::size_t e = 0; e < in.lambda.size(); ++e)
      if (in.lambda[e] != 0.0)
        v += in.weights[e] * (std::exp(-a * pi * in.beta[e]) * (y + in.u[e]) - y) * in.lambda[e];
    return v;
  };
  if (jump_free(in)) {
    HamiltonianResult r{in.c_lo, G(in.c_lo), 0.0};
    auto consider = [&](double pi) {
      const double v = G(pi);
      if (v < r.value) r = {pi, v, 0.0};
    };
    consider(in.c_hi);
    if (y > 0.0) consider(std::clamp((in.z + in.vartheta * y) / (a * in.sigma * y), in.c_lo, in.c_hi));
    r.driver = r.value;
    return r;
  }
  const auto m = golden_section_min(G, in.c_lo, in.c_hi);
  return {m.argmin, m.value, m.value};
}

namespace {

HamiltonianInput input_for(const UtilityProblem& p, const DriverArgs& a) {
  const int r = p.regime(a.k);
  HamiltonianInput in;
  in.alpha = p.alpha;
  in.sigma = p.market.sigma[r];
  in.vartheta = p.market.b[r] / in.sigma;
  in.z = a.z;
  in.u = a.u;
  in.beta = p.market.beta[r];
  in.lambda = a.lambda;
  in.weights = a.marks->weights;
  in.c_lo = p.c_lo;
  in.c_hi = p.c_hi;
  return in;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

DecomposedTerminal utility_terminal(const UtilityProblem& p) {
  const ClaimSpec claim = p.claim;
  return {[claim](const History& h, double x) { return claim(h.size(), x); }};
}

DecomposedTerminal transformed_terminal(const UtilityProblem& p) {
  const ClaimSpec claim = p.claim;
  const double alpha = p.alpha;
  return {[claim, alpha](const History& h, double x) { return std::exp(alpha * claim(h.size(), x)); }};
}

DecomposedDriver utility_driver(const UtilityProblem& p) {
  p.validate();
  DecomposedDriver d;
  d.driver_class = DriverClass::quadratic_z;
  d.z_clip = p.z_clip;
  d.f = [p](const DriverArgs& a) { return minimize_hamiltonian(input_for(p, a)).driver; };
  double beta_max = 0.0, theta_max = 0.0;
  for (const auto& row : p.market.beta) beta_max = std::max(beta_max, max_abs(row));
  for (std::size_t r = 0; r < p.market.b.size(); ++r)
    theta_max = std::max(theta_max, std::abs(p.market.b[r] / p.market.sigma[r]));
  const double cmax = std::max(-p.c_lo, p.c_hi);
  const double lam = std::isfinite(p.model->intensity_bound()) ? p.model->intensity_bound() : 0.0;
  d.lipschitz_y = lam * std::exp(p.alpha * (2.0 * p.claim.bound + cmax * beta_max));
  d.lipschitz_z = p.alpha * p.z_clip + theta_max;
  return d;
}

DecomposedDriver transformed_driver(const UtilityProblem& p) {
  p.validate();
  DecomposedDriver d;
  d.driver_class = DriverClass::lipschitz;
  d.f = [p](const DriverArgs& a) { return minimize_transformed(input_for(p, a), a.y).value; };
  double beta_max = 0.0, theta_max = 0.0, sigma_max = 0.0;
  for (const auto& row : p.market.beta) beta_max = std::max(beta_max, max_abs(row));
  for (std::size_t r = 0; r < p.market.b.size(); ++r) {
    theta_max = std::max(theta_max, std::abs(p.market.b[r] / p.market.sigma[r]));
    sigma_max = std::max(sigma_max, p.market.sigma[r]);
  }
  const double cmax = std::max(-p.c_lo, p.c_hi);
  const double a = p.alpha;
  const double lam = std::isfinite(p.model->intensity_bound()) ? p.model->intensity_bound() : 0.0;
  // y enters directly and through u = Y~^{k+1} - y.
  d.lipschitz_y = 0.5 * a * a * cmax * cmax * sigma_max * sigma_max + a * cmax * sigma_max * theta_max +
                  lam * (std::exp(a * cmax * beta_max) + 1.0);
  d.lipschitz_z = a * cmax * sigma_max;
  return d;
}

UtilitySolution solve_utility(const UtilityProblem& p, const UtilityOptions& opts,
                              std::shared_ptr<const LsmcContext> ctx) {
  p.validate();
  UtilitySolution s;
  s.direct = std::make_shared<const CascadeSolution>(
      solve_cascade(utility_terminal(p), utility_driver(p), p.model, p.grid, opts.cascade, ctx));
  s.y0 = s.direct->solution(History{}).y0();
  s.value = -std::exp(-p.alpha * (p.x0 - s.y0));
  if (opts.transform) {
    CascadeOptions co = opts.cascade;
    co.truncation = 0.0;
    s.transformed = std::make_shared<const CascadeSolution>(
        solve_cascade(transformed_terminal(p), transformed_driver(p), p.model, p.grid, co, ctx));
    const double g0 = s.transformed->solution(History{}).y0();
    if (!(g0 > 0.0)) throw BoundViolation("transformed solve lost positivity: Y~_0 = " + std::to_string(g0));
    s.y0_transformed = std::log(g0) / p.alpha;
  }
  return s;
}

HamiltonianResult optimal_strategy(const UtilityProblem& p, const CascadeSolution& c, const History& h, int i,
                                   double x, double y, double z, std::span<const double> u) {
  DriverArgs a;
  a.k = h.size();
  a.i = i;
  a.t = c.grid().t(i);
  a.x = x;
  a.y = y;
  a.z = z;
  a.u = u;
  a.lambda = c.intensity(h).row(i);
  a.history = &h;
  a.marks = &c.marks();
  return minimize_hamiltonian(input_for(p, a));
}

std::vector<MartingaleReport> verify_martingale_optimality(const UtilityProblem& p, const CascadeSolution& direct,
                                                           std::span<const StrategyPerturbation> strategies,
                                                           std::size_t paths, std::uint64_t seed, int threads) {
  p.validate();
  const TimeGrid& g = direct.grid();
  const int M = g.M;
  const std::size_t S = strategies.size();
  const IncrementKind kind =
      direct.backend() == Backend::tree ? IncrementKind::rademacher : IncrementKind::gaussian;
  const BrownianBatch batch = simulate_brownian(g, paths, seed, kind);
  const JumpSampler sampler(p.model);
  const double y0 = direct.solution(History{}).y0();
  const double r0 = -std::exp(-p.alpha * (p.x0 - y0));

  constexpr std::size_t kChunk = 512;
  const std::size_t chunks = chunk_count(paths, kChunk);
  std::vector<std::vector<std::array<double, 2>>> acc(chunks, std::vector<std::array<double, 2>>(S, {0.0, 0.0}));
  parallel_chunks(paths, kChunk, threads, [&](std::size_t c, std::size_t b, std::size_t e) {
    std::vector<double> dW(M), hat(M), pi(M);
    for (std::size_t q = b; q < e; ++q) {
      batch.increments(q, dW);
      std::vector<double> W(M + 1, 0.0);
      for (int i = 0; i < M; ++i) W[i + 1] = W[i] + dW[i];
      const auto jumps = sampler.sample(PathStream(seed, Stream::jumps, q));
      const GluedPath gp = glue(direct, jumps, W);
      const MarketPath mk = simulate_market_jump_diffusion(p.market, g, jumps, dW);
      for (int i = 0; i < M; ++i) {
        const History& h = gp.histories[gp.regime[i]];
        hat[i] = optimal_strategy(p, direct, h, i, W[i], gp.Y[i], gp.Z_step[i], gp.u_step(i)).pi;
      }
      const double B = direct.terminal(gp.histories[gp.regime[M]], W[M]);
      for (std::size_t s = 0; s < S; ++s) {
        const StrategyPerturbation& st = strategies[s];
        const PathStream noise(st.seed, Stream::perturbation, q);
        for (int i = 0; i < M; ++i) {
          const double base = st.use_hat ? hat[i] : st.constant;
          const double n = st.noise != 0.0 ? st.noise * noise.normal(static_cast<std::uint32_t>(i)) : 0.0;
          pi[i] = std::clamp(base + st.shift + n, p.c_lo, p.c_hi);
        }
        const auto X = simulate_wealth(pi, mk, g, p.x0);
        const double rt = -std::exp(-p.alpha * (X[M] - B));
        acc[c][s][0] += rt;
        acc[c][s][1] += rt * rt;
      }
    }
  });
  std::vector<MartingaleReport> out(S);
  const double N = static_cast<double>(paths);
  for (std::size_t s = 0; s < S; ++s) {
    double sum = 0, sum2 = 0;
    for (const auto& a : acc) {
      sum += a[s][0];
      sum2 += a[s][1];
    }
    out[s].r0 = r0;
    out[s].paths = paths;
    out[s].mean_rt = sum / N;
    out[s].std_err = paths > 1 ? std::sqrt(std::max(0.0, sum2 / N - out[s].mean_rt * out[s].mean_rt) / (N - 1)) : 0.0;
  }
  return out;
}

void write_utility_csv(const UtilityProblem& p, const CascadeSolution& direct, std::ostream& out) {
  CsvWriter w(out, {"t", "state", "regime", "Y", "pi_hat"});
  const TimeGrid& g = direct.grid();
  const std::size_t E = direct.marks().size();
  std::vector<double> u(E);
  for (int k = 0; k <= direct.n(); ++k) {
    const History h{std::vector<int>(k, 0), std::vector<int>(k, 0)};
    const BsdeSolution& s = direct.solution(h);
    for (int i = 0; i <= g.M; ++i) {
      const double t = g.t(i);
      for (int j = 0; j <= 20; ++j) {
        const double x = (j - 10) / 10.0 * 3.0 * std::sqrt(t);
        const double y = s.y(i, x);
        double pi_hat = 0.0;
        if (i < g.M) {
          direct.sectioned_u(h, i, x, y, u);
          pi_hat = optimal_strategy(p, direct, h, i, x, y, s.z(i, x), u).pi;
        }
        w.row({fmt(t), fmt(x), std::to_string(k), fmt(y), fmt(pi_hat)});
      }
    }
  }
}

}  // namespace cbsde
