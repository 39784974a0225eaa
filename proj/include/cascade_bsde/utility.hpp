#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "cascade_bsde/brownian_bsde.hpp"
#include "cascade_bsde/cascade.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/scenario.hpp"

namespace cbsde {

// B^k(x) = clip(base + per_jump * k + slope * x, [-bound, bound]) with x = W_T.
struct ClaimSpec {
  double base = 0.0;
  double per_jump = 0.0;
  double slope = 0.0;
  double bound = 10.0;

  double operator()(int k, double x) const;
};

struct UtilityProblem {
  double alpha = 1.0;
  double c_lo = 0.0, c_hi = 0.0;  // constraint set C = [c_lo, c_hi]
  JumpDiffusionMarket market;     // regime k = number of past jumps (last entry reused)
  ClaimSpec claim;
  DensityModelPtr model;
  TimeGrid grid;
  double x0 = 0.0;       // initial capital
  double z_clip = 25.0;  // z truncation of the quadratic driver

  void validate() const;
  int regime(int k) const;
};

struct MinimizeResult {
  double argmin = 0.0;
  double value = 0.0;
};

// Golden-section search for a strictly convex function on [lo, hi].
MinimizeResult golden_section_min(const std::function<double(double)>& fn, double lo, double hi,
                                  double tol = 1e-8);

// Data of one Hamiltonian evaluation: lambda, beta, weights and u per mark.
struct HamiltonianInput {
  double alpha = 1.0;
  double sigma = 1.0;
  double vartheta = 0.0;  // b / sigma
  double z = 0.0;
  std::span<const double> u;
  std::span<const double> beta;
  std::span<const double> lambda;
  std::span<const double> weights;
  double c_lo = 0.0, c_hi = 0.0;
};

// F(pi) = alpha/2 (pi sigma - z - vartheta/alpha)^2 + sum_e w (exp(alpha(u - pi beta)) - 1)/alpha lambda.
double hamiltonian(const HamiltonianInput& in, double pi);

struct HamiltonianResult {
  double pi = 0.0;      // minimizer over C
  double value = 0.0;   // min F
  double driver = 0.0;  // min F - vartheta z - vartheta^2 / (2 alpha)
};

HamiltonianResult minimize_hamiltonian(const HamiltonianInput& in);

// Driver of exp(alpha Y) in (y~, z~, u~): the infimum over C of
// alpha^2/2 (pi sigma)^2 y - alpha pi sigma (z + vartheta y) + sum_e w (exp(-alpha pi beta)(y + u) - y) lambda.
HamiltonianResult minimize_transformed(const HamiltonianInput& in, double y);

DecomposedTerminal utility_terminal(const UtilityProblem& p);
DecomposedDriver utility_driver(const UtilityProblem& p);
DecomposedTerminal transformed_terminal(const UtilityProblem& p);
DecomposedDriver transformed_driver(const UtilityProblem& p);

struct UtilityOptions {
  CascadeOptions cascade;
  bool transform = true;  // also solve for exp(alpha Y)
};

struct UtilitySolution {
  std::shared_ptr<const CascadeSolution> direct;
  std::shared_ptr<const CascadeSolution> transformed;
  double y0 = 0.0;
  double y0_transformed = 0.0;  // ln(Y~_0) / alpha
  double value = 0.0;           // V(x0) = -exp(-alpha (x0 - Y_0))
};

UtilitySolution solve_utility(const UtilityProblem& p, const UtilityOptions& opts,
                              std::shared_ptr<const LsmcContext> ctx = nullptr);

// Hamiltonian input at (history, node, state) of a solved direct cascade.
HamiltonianResult optimal_strategy(const UtilityProblem& p, const CascadeSolution& c, const History& h, int i,
                                   double x, double y, double z, std::span<const double> u);

// pi_i = clamp(base_i + shift + noise * N_i, C) with base_i = pi_hat_i or `constant`.
struct StrategyPerturbation {
  bool use_hat = true;
  double constant = 0.0;
  double shift = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct MartingaleReport {
  double r0 = 0.0;
  double mean_rt = 0.0;
  double std_err = 0.0;
  std::size_t paths = 0;
};

// Simulates X^{x0, pi} and R_T = -exp(-alpha (X_T - B)) for every strategy
// on common scenarios shared with the glued cascade. Tree solutions are
// evaluated on Rademacher paths, regression solutions on Gaussian ones.
std::vector<MartingaleReport> verify_martingale_optimality(const UtilityProblem& p,
                                                           const CascadeSolution& direct,
                                                           std::span<const StrategyPerturbation> strategies,
                                                           std::size_t paths, std::uint64_t seed,
                                                           int threads = 0);

// Rows `t,state,regime,Y,pi_hat`; regime k is shown on the history with all
// k jumps at node 0 and mark 0, on 21 states per node.
void write_utility_csv(const UtilityProblem& p, const CascadeSolution& direct, std::ostream& out);

}  // namespace cbsde
