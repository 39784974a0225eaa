#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <string>

#include "cascade_bsde/brownian_bsde.hpp"
#include "cascade_bsde/cascade.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/scenario.hpp"

namespace cbsde {

// European payoff written on S^2_T.
struct Payoff {
  enum class Kind { constant, digital, put } kind = Kind::constant;
  double strike = 1.0;    // level for constant, strike otherwise
  double notional = 1.0;  // digital pays notional on S^2_T > strike

  static Kind parse(const std::string& s);
};

// Single-jump market with claim xi^0 on {T < tau} and xi^1(tau) on {tau <= T}.
struct PricingProblem {
  SingleJumpMarket market;
  Payoff payoff0;
  Payoff payoff1;
  DensityModelPtr model;  // n = 1
  TimeGrid grid;

  void validate() const;
};

// Coefficients of the two levels of the pricing driver
// f^1 = d1 z - r1 y and f^0 = d0 z + kappa0 u - r0 y.
struct PricingCoefficients {
  double d0 = 0.0, d1 = 0.0, kappa0 = 0.0, r0 = 0.0, r1 = 0.0;
};
PricingCoefficients pricing_coefficients(const SingleJumpMarket& m);

// Discounted conditional expectations under the pricing measure, with W_T
// Gaussian given W_t. Y and Z are in the Brownian state w = W_t; theta is the
// jump time (continuous, clipped to T for the S^2 drift switch).
class ClosedFormPrice {
 public:
  explicit ClosedFormPrice(PricingProblem problem, int quad_panels = 64);

  double y1(double t, double w, double theta) const;
  double z1(double t, double w, double theta) const;
  double y0(double t, double w) const;
  double z0(double t, double w) const;
  // Claim value at T for a realized terminal state.
  double xi0(double w) const;
  double xi1(double w, double theta) const;
  double s2_terminal(double w, double theta) const;
  const PricingProblem& problem() const { return p_; }

 private:
  // E[payoff(S^2_T)] and its derivative in the mean for W_T ~ N(mean, var).
  double pay(const Payoff& pf, double mean, double var, double theta, bool deriv) const;
  double y0_impl(double t, double w, bool deriv) const;

  PricingProblem p_;
  PricingCoefficients c_;
  int panels_;
};

ClosedFormPrice price_option_closed_form(const PricingProblem& problem);

// Decomposed data of the pricing BSDE for the generic cascade solver.
DecomposedTerminal pricing_terminal(const PricingProblem& problem);
DecomposedDriver pricing_driver(const PricingProblem& problem);

struct HedgeRatios {
  double pi0 = 0.0, pi1 = 0.0, pi2 = 0.0;
};

// Solves pi1 beta S1_- = U and pi1 sigma S1 + pi2 sigmabar S2 = Z, then the
// riskless position from the wealth identity.
HedgeRatios extract_hedge(double y, double z, double u, double beta, double sigma, double sigmabar,
                          double s0, double s1, double s2);

struct HedgeReport {
  std::size_t paths = 0;
  std::size_t jump_paths = 0;
  double mean_abs_error_jump = 0.0;     // mean |X_T - xi| over paths with tau <= T
  double mean_abs_error_no_jump = 0.0;  // mean |X_T - xi| over paths without a jump
  double max_mean_tracking = 0.0;       // max over nodes of mean |X_i - Y_i|
  double max_identity_residual = 0.0;   // hedge identity residual
};

// Rebalances (pi0, pi1, pi2) from the closed-form (Y, Z, U) at each node and
// compares the self-financed wealth with the claim.
HedgeReport simulate_hedge(const ClosedFormPrice& price, std::size_t paths, std::uint64_t seed,
                           int threads = 0);

// Rows `t,state,Y0,Y1_theta,pi0,pi1,pi2` on 21 states per node along the
// no-jump branch; Y1_theta is the sectioned value Y^1_t(t).
void write_pricing_csv(const ClosedFormPrice& price, std::ostream& out);

}  // namespace cbsde
