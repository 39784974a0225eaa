#include "cascade_bsde/pricing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "cascade_bsde/csv.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/parallel.hpp"

namespace cbsde {

namespace {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

constexpr double kTinyVar = 1e-14;

}  // namespace

Payoff::Kind Payoff::parse(const std::string& s) {
  if (s == "constant") return Kind::constant;
  if (s == "digital") return Kind::digital;
  if (s == "put") return Kind::put;
  throw ValidationError("payoff", "expected constant, digital or put, got '" + s + "'");
}

void PricingProblem::validate() const {
  market.validate();
  if (market.beta == 0.0)
    throw ValidationError("beta", "must be nonzero: the hedge ratio on S^1 divides by beta");
  if (!model) throw ValidationError("model", "density model is required");
  if (model->n() != 1) throw ValidationError("n_jumps", "the pricing problem has a single jump");
  if (model->marks().size() != 1) throw ValidationError("marks", "the pricing problem is unmarked");
  for (const Payoff* p : {&payoff0, &payoff1}) {
    if (p->kind != Payoff::Kind::constant && !(p->strike > 0.0))
      throw ValidationError("strike", "must be positive");
    if (p->kind != Payoff::Kind::constant && market.pre.sigmabar != market.post.sigmabar)
      throw ValidationError("sigmabar", "payoffs on S^2 need the same S^2 volatility in both regimes");
  }
}

PricingCoefficients pricing_coefficients(const SingleJumpMarket& m) {
  PricingCoefficients c;
  c.r0 = m.pre.r;
  c.r1 = m.post.r;
  c.d0 = (m.pre.r - m.pre.bbar) / m.pre.sigmabar;
  c.d1 = (m.post.r - m.post.bbar) / m.post.sigmabar;
  c.kappa0 = (m.pre.r - m.pre.b) / m.beta - m.pre.sigma * (m.pre.r - m.pre.bbar) / (m.beta * m.pre.sigmabar);
  return c;
}

ClosedFormPrice::ClosedFormPrice(PricingProblem problem, int quad_panels)
    : p_(std::move(problem)), panels_(quad_panels + quad_panels % 2) {
  p_.validate();
  c_ = pricing_coefficients(p_.market);
}

double ClosedFormPrice::pay(const Payoff& pf, double mean, double var, double theta, bool deriv) const {
  if (pf.kind == Payoff::Kind::constant) return deriv ? 0.0 : pf.strike;
  const auto& m = p_.market;
  const double T = p_.grid.T;
  const double th = std::clamp(theta, 0.0, T);
  const double sb = m.pre.sigmabar;
  const double logA = std::log(m.s2) + m.pre.bbar * th + m.post.bbar * (T - th) - 0.5 * sb * sb * T;
  const double sd = std::sqrt(std::max(var, 0.0));
  if (pf.kind == Payoff::Kind::digital) {
    const double c = (std::log(pf.strike) - logA) / sb;
    if (var < kTinyVar) return deriv ? 0.0 : (mean > c ? pf.notional : 0.0);
    const double q = (mean - c) / sd;
    return deriv ? pf.notional * norm_pdf(q) / sd : pf.notional * norm_cdf(q);
  }
  const double mu = logA + sb * mean;
  const double K = pf.strike;
  if (var < kTinyVar) {
    const double s = std::exp(mu);
    if (deriv) return s < K ? -sb * s : 0.0;
    return std::max(K - s, 0.0);
  }
  const double s = sb * sd;
  const double d2 = (mu - std::log(K)) / s;
  const double d1 = d2 + s;
  const double fwd = std::exp(mu + 0.5 * s * s);
  if (deriv) return -sb * fwd * norm_cdf(-d1);
  return K * norm_cdf(-d2) - fwd * norm_cdf(-d1);
}

double ClosedFormPrice::s2_terminal(double w, double theta) const {
  const auto& m = p_.market;
  const double T = p_.grid.T;
  const double th = std::clamp(theta, 0.0, T);
  const double sb = m.pre.sigmabar;
  return m.s2 * std::exp(m.pre.bbar * th + m.post.bbar * (T - th) - 0.5 * sb * sb * T + sb * w);
}

double ClosedFormPrice::y1(double t, double w, double theta) const {
  const double tau = p_.grid.T - t;
  return std::exp(-c_.r1 * tau) * pay(p_.payoff1, w + c_.d1 * tau, tau, theta, false);
}

double ClosedFormPrice::z1(double t, double w, double theta) const {
  const double tau = p_.grid.T - t;
  return std::exp(-c_.r1 * tau) * pay(p_.payoff1, w + c_.d1 * tau, tau, theta, true);
}

double ClosedFormPrice::y0_impl(double t, double w, bool deriv) const {
  const double T = p_.grid.T;
  const double tau = T - t;
  const double a = -c_.r0 - c_.kappa0;
  double v = std::exp(a * tau) * pay(p_.payoff0, w + c_.d0 * tau, tau, T, deriv);
  if (c_.kappa0 == 0.0 || tau <= 0.0) return v;
  // Sectioned post-jump value composed with the pre-jump Gaussian transition:
  // W_T | W_t = w is N(w + d0 (s - t) + d1 (T - s), T - t) for a jump at s.
  auto integrand = [&](double s) {
    return std::exp(a * (s - t) - c_.r1 * (T - s)) *
           pay(p_.payoff1, w + c_.d0 * (s - t) + c_.d1 * (T - s), tau, s, deriv);
  };
  const double h = tau / panels_;
  double acc = integrand(t) + integrand(T);
  for (int j = 1; j < panels_; ++j) acc += (j % 2 ? 4.0 : 2.0) * integrand(t + j * h);
  return v + c_.kappa0 * acc * h / 3.0;
}

double ClosedFormPrice::y0(double t, double w) const { return y0_impl(t, w, false); }
double ClosedFormPrice::z0(double t, double w) const { return y0_impl(t, w, true); }

double ClosedFormPrice::xi0(double w) const { return pay(p_.payoff0, w, 0.0, p_.grid.T, false); }
double ClosedFormPrice::xi1(double w, double theta) const { return pay(p_.payoff1, w, 0.0, theta, false); }

ClosedFormPrice price_option_closed_form(const PricingProblem& problem) { return ClosedFormPrice(problem); }

DecomposedTerminal pricing_terminal(const PricingProblem& problem) {
  auto cf = std::make_shared<ClosedFormPrice>(problem);
  const TimeGrid grid = problem.grid;
  return {[cf, grid](const History& h, double x) {
    return h.size() == 0 ? cf->xi0(x) : cf->xi1(x, grid.t(h.theta[0]));
  }};
}

DecomposedDriver pricing_driver(const PricingProblem& problem) {
  problem.validate();
  const PricingCoefficients c = pricing_coefficients(problem.market);
  DecomposedDriver d;
  d.driver_class = DriverClass::affine;
  d.f = [c](const DriverArgs& a) {
    if (a.k >= 1) return c.d1 * a.z - c.r1 * a.y;
    return c.d0 * a.z + c.kappa0 * a.u[0] - c.r0 * a.y;
  };
  d.lipschitz_y = std::max(std::abs(c.r1), std::abs(c.r0) + std::abs(c.kappa0));
  d.lipschitz_z = std::max(std::abs(c.d0), std::abs(c.d1));
  return d;
}

HedgeRatios extract_hedge(double y, double z, double u, double beta, double sigma, double sigmabar,
                          double s0, double s1, double s2) {
  if (!(s0 > 0.0 && s1 > 0.0 && s2 > 0.0)) throw ValidationError("prices", "asset prices must be positive");
  if (!(sigmabar > 0.0)) throw ValidationError("sigmabar", "must be positive");
  HedgeRatios h;
  if (u != 0.0) {
    if (beta == 0.0) throw ValidationError("beta", "jump exposure cannot be hedged with beta = 0");
    h.pi1 = u / (beta * s1);
  }
  h.pi2 = (z - h.pi1 * sigma * s1) / (sigmabar * s2);
  h.pi0 = (y - h.pi1 * s1 - h.pi2 * s2) / s0;
  return h;
}

HedgeReport simulate_hedge(const ClosedFormPrice& price, std::size_t paths, std::uint64_t seed, int threads) {
  const PricingProblem& pb = price.problem();
  const TimeGrid& g = pb.grid;
  const int M = g.M;
  const BrownianBatch batch = simulate_brownian(g, paths, seed);
  const JumpSampler sampler(pb.model);
  const double x0 = price.y0(0.0, 0.0);
  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = chunk_count(paths, kChunk);
  struct Acc {
    std::size_t jumps = 0;
    double err_jump = 0, err_none = 0, identity = 0;
    std::vector<double> tracking;
  };
  std::vector<Acc> acc(chunks);
  parallel_chunks(paths, kChunk, threads, [&](std::size_t c, std::size_t b, std::size_t e) {
    Acc& a = acc[c];
    a.tracking.assign(M + 1, 0.0);
    std::vector<double> dW(M);
    for (std::size_t p = b; p < e; ++p) {
      batch.increments(p, dW);
      const auto jump = sampler.sample(PathStream(seed, Stream::jumps, p));
      const MarketPath mk = simulate_market_single_jump(pb.market, g, jump, dW);
      const int j = jump.times.empty() ? M + 1 : g.snap(jump.times[0]);
      double X = x0, w = 0.0;
      for (int i = 0; i <= M; ++i) {
        const double t = g.t(i);
        const bool after = j <= i;
        const double theta = after ? g.t(j) : t;
        const double Y = after ? price.y1(t, w, theta) : price.y0(t, w);
        a.tracking[i] += std::abs(X - Y);
        if (i == M) break;
        const double Z = after ? price.z1(t, w, theta) : price.z0(t, w);
        const double U = after ? 0.0 : price.y1(t, w, t) - Y;
        const RegimeCoefficients& rc = after ? pb.market.post : pb.market.pre;
        const HedgeRatios h =
            extract_hedge(X, Z, U, pb.market.beta, rc.sigma, rc.sigmabar, mk.S0[i], mk.S1[i], mk.S2[i]);
        a.identity = std::max(a.identity, std::abs(h.pi1 * rc.sigma * mk.S1[i] + h.pi2 * rc.sigmabar * mk.S2[i] - Z) +
                                              std::abs(h.pi1 * pb.market.beta * mk.S1[i] - U));
        X = h.pi0 * mk.S0[i + 1] + h.pi1 * mk.S1[i + 1] + h.pi2 * mk.S2[i + 1];
        w += dW[i];
      }
      const bool jumped = j <= M;
      const double xi = jumped ? price.xi1(w, g.t(j)) : price.xi0(w);
      if (jumped) {
        ++a.jumps;
        a.err_jump += std::abs(X - xi);
      } else {
        a.err_none += std::abs(X - xi);
      }
    }
  });
  HedgeReport r;
  r.paths = paths;
  double ej = 0, en = 0;
  std::vector<double> tracking(M + 1, 0.0);
  for (const Acc& a : acc) {
    r.jump_paths += a.jumps;
    ej += a.err_jump;
    en += a.err_none;
    r.max_identity_residual = std::max(r.max_identity_residual, a.identity);
    for (int i = 0; i <= M; ++i) tracking[i] += a.tracking[i];
  }
  const std::size_t none = paths - r.jump_paths;
  r.mean_abs_error_jump = r.jump_paths ? ej / static_cast<double>(r.jump_paths) : 0.0;
  r.mean_abs_error_no_jump = none ? en / static_cast<double>(none) : 0.0;
  for (double v : tracking) r.max_mean_tracking = std::max(r.max_mean_tracking, v / static_cast<double>(paths));
  return r;
}

void write_pricing_csv(const ClosedFormPrice& price, std::ostream& out) {
  const PricingProblem& pb = price.problem();
  const auto& m = pb.market;
  const TimeGrid& g = pb.grid;
  CsvWriter w(out, {"t", "state", "Y0", "Y1_theta", "pi0", "pi1", "pi2"});
  for (int i = 0; i <= g.M; ++i) {
    const double t = g.t(i);
    for (int j = 0; j <= 20; ++j) {
      const double x = (j - 10) / 10.0 * 3.0 * std::sqrt(t);
      const double s0 = m.s0 * std::exp(m.pre.r * t);
      const double s1 = m.s1 * std::exp((m.pre.b - 0.5 * m.pre.sigma * m.pre.sigma) * t + m.pre.sigma * x);
      const double s2 =
          m.s2 * std::exp((m.pre.bbar - 0.5 * m.pre.sigmabar * m.pre.sigmabar) * t + m.pre.sigmabar * x);
      const double y0 = price.y0(t, x);
      const double y1 = price.y1(t, x, t);
      const HedgeRatios h = extract_hedge(y0, price.z0(t, x), i < g.M ? y1 - y0 : 0.0, m.beta, m.pre.sigma,
                                          m.pre.sigmabar, s0, s1, s2);
      w.row({t, x, y0, y1, h.pi0, h.pi1, h.pi2});
    }
  }
}

}  // namespace cbsde
