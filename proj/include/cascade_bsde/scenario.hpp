#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cascade_bsde/grid.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/rng.hpp"

namespace cbsde {

enum class IncrementKind {
  gaussian,    // N(0, dt)
  rademacher,  // +-sqrt(dt), the paths of the binomial tree
};

// Brownian increments addressed by (path, step); nothing is stored, every
// increment is regenerated from the counter-based stream on demand.
struct BrownianBatch {
  TimeGrid grid;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  IncrementKind kind = IncrementKind::gaussian;

  double increment(std::size_t path, int step) const;
  // W at nodes 0..M for one path.
  std::vector<double> path(std::size_t p) const;
  void increments(std::size_t p, std::span<double> out) const;
};

BrownianBatch simulate_brownian(const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                IncrementKind kind = IncrementKind::gaussian);

// Row-major paths x (M + 1) matrix of W values.
std::vector<double> materialize_paths(const BrownianBatch& batch, int threads = 0);

// Coefficients of one regime of the two-asset market with a jump in S^1.
struct RegimeCoefficients {
  double r = 0.0;         // short rate
  double b = 0.0;         // drift of S^1
  double sigma = 0.2;     // volatility of S^1
  double bbar = 0.0;      // drift of S^2
  double sigmabar = 0.2;  // volatility of S^2
};

struct SingleJumpMarket {
  RegimeCoefficients pre;
  RegimeCoefficients post;
  double beta = 0.0;  // relative jump of S^1 at tau
  double s0 = 1.0, s1 = 1.0, s2 = 1.0;

  void validate() const;
};

// Per-node state along one scenario. `regime[i]` counts jumps snapped to
// nodes <= i. Step arrays hold the coefficients applied on (t_i, t_{i+1}]:
// drift, vol and dW of the traded risky asset, and jump_return[i + 1] is the
// relative jump realized at node i + 1.
struct MarketPath {
  std::vector<double> S0, S1, S2;
  std::vector<int> regime;
  std::vector<double> drift, vol, dW;
  std::vector<double> jump_return;
};

// Log-Euler scheme for S^1, S^2 with the jump of S^1 applied at the first grid
// node >= tau; S^0 accrues at the regime short rate.
MarketPath simulate_market_single_jump(const SingleJumpMarket& market, const TimeGrid& grid,
                                       const MarkedJumpSample& jump, std::span<const double> dW);

// Regime-switching jump-diffusion dS = S(b dt + sigma dW + beta(e) dN) with
// coefficients indexed by the number of past jumps.
struct JumpDiffusionMarket {
  std::vector<double> b;                   // per regime
  std::vector<double> sigma;               // per regime
  std::vector<std::vector<double>> beta;   // per regime, per mark
  double s0 = 1.0;

  void validate(std::size_t n_marks) const;
};

MarketPath simulate_market_jump_diffusion(const JumpDiffusionMarket& market, const TimeGrid& grid,
                                          const MarkedJumpSample& jumps, std::span<const double> dW);

// X_{i+1} = X_i + pi_i (drift_i dt + vol_i dW_i + jump_return_{i+1}); the
// amount pi_i invested in the risky asset is held over (t_i, t_{i+1}].
std::vector<double> simulate_wealth(std::span<const double> pi, const MarketPath& market,
                                    const TimeGrid& grid, double x);

}  // namespace cbsde
