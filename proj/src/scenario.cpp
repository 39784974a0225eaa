#include "cascade_bsde/scenario.hpp"

#include <cmath>

#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/parallel.hpp"

namespace cbsde {

double BrownianBatch::increment(std::size_t path, int step) const {
  const PathStream s(seed, Stream::brownian, path);
  const double sd = std::sqrt(grid.dt());
  const auto idx = static_cast<std::uint32_t>(step);
  return kind == IncrementKind::gaussian ? sd * s.normal(idx) : sd * s.sign(idx);
}

void BrownianBatch::increments(std::size_t p, std::span<double> out) const {
  const PathStream s(seed, Stream::brownian, p);
  const double sd = std::sqrt(grid.dt());
  for (int i = 0; i < grid.M; ++i) {
    const auto idx = static_cast<std::uint32_t>(i);
    out[i] = kind == IncrementKind::gaussian ? sd * s.normal(idx) : sd * s.sign(idx);
  }
}

std::vector<double> BrownianBatch::path(std::size_t p) const {
  std::vector<double> dw(grid.M);
  increments(p, dw);
  std::vector<double> w(grid.M + 1, 0.0);
  for (int i = 0; i < grid.M; ++i) w[i + 1] = w[i] + dw[i];
  return w;
}

BrownianBatch simulate_brownian(const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                IncrementKind kind) {
  if (paths < 1) throw ValidationError("paths", "must be >= 1");
  return BrownianBatch{grid, paths, seed, kind};
}

std::vector<double> materialize_paths(const BrownianBatch& batch, int threads) {
  const std::size_t stride = static_cast<std::size_t>(batch.grid.M) + 1;
  std::vector<double> out(batch.paths * stride);
  parallel_chunks(batch.paths, 4096, threads, [&](std::size_t, std::size_t b, std::size_t e) {
    std::vector<double> dw(batch.grid.M);
    for (std::size_t p = b; p < e; ++p) {
      batch.increments(p, dw);
      double* w = out.data() + p * stride;
      w[0] = 0.0;
      for (int i = 0; i < batch.grid.M; ++i) w[i + 1] = w[i] + dw[i];
    }
  });
  return out;
}

void SingleJumpMarket::validate() const {
  if (!(beta > -1.0)) throw ValidationError("beta", "must be > -1");
  for (const auto* c : {&pre, &post}) {
    if (!(c->sigma > 0.0)) throw ValidationError("sigma", "must be positive");
    if (!(c->sigmabar > 0.0)) throw ValidationError("sigmabar", "must be positive");
  }
  if (!(s0 > 0.0 && s1 > 0.0 && s2 > 0.0)) throw ValidationError("s0", "initial prices must be positive");
}

MarketPath simulate_market_single_jump(const SingleJumpMarket& market, const TimeGrid& grid,
                                       const MarkedJumpSample& jump, std::span<const double> dW) {
  market.validate();
  const int M = grid.M;
  const double dt = grid.dt();
  const int j = jump.times.empty() ? M + 1 : grid.snap(jump.times[0]);
  MarketPath out;
  out.S0.assign(M + 1, market.s0);
  out.S1.assign(M + 1, market.s1);
  out.S2.assign(M + 1, market.s2);
  out.regime.assign(M + 1, 0);
  out.drift.assign(M, 0.0);
  out.vol.assign(M, 0.0);
  out.dW.assign(dW.begin(), dW.begin() + M);
  out.jump_return.assign(M + 1, 0.0);
  for (int i = 0; i <= M; ++i) out.regime[i] = j <= i ? 1 : 0;
  for (int i = 0; i < M; ++i) {
    const RegimeCoefficients& c = out.regime[i] ? market.post : market.pre;
    out.drift[i] = c.b;
    out.vol[i] = c.sigma;
    out.S0[i + 1] = out.S0[i] * std::exp(c.r * dt);
    out.S1[i + 1] = out.S1[i] * std::exp((c.b - 0.5 * c.sigma * c.sigma) * dt + c.sigma * dW[i]);
    out.S2[i + 1] =
        out.S2[i] * std::exp((c.bbar - 0.5 * c.sigmabar * c.sigmabar) * dt + c.sigmabar * dW[i]);
    if (i + 1 == j) {
      out.S1[i + 1] *= 1.0 + market.beta;
      out.jump_return[i + 1] = market.beta;
    }
  }
  return out;
}

void JumpDiffusionMarket::validate(std::size_t n_marks) const {
  if (b.empty() || b.size() != sigma.size() || b.size() != beta.size())
    throw ValidationError("b", "regime coefficient lists must have equal, nonzero length");
  for (double s : sigma)
    if (!(s > 0.0)) throw ValidationError("sigma", "must be positive");
  for (const auto& row : beta) {
    if (row.size() != n_marks) throw ValidationError("beta", "need one jump size per mark");
    for (double x : row)
      if (!(x > -1.0)) throw ValidationError("beta", "must be > -1");
  }
  if (!(s0 > 0.0)) throw ValidationError("s0", "must be positive");
}

MarketPath simulate_market_jump_diffusion(const JumpDiffusionMarket& market, const TimeGrid& grid,
                                          const MarkedJumpSample& jumps, std::span<const double> dW) {
  const int M = grid.M;
  const double dt = grid.dt();
  const int R = static_cast<int>(market.b.size());
  MarketPath out;
  out.S1.assign(M + 1, market.s0);
  out.regime.assign(M + 1, 0);
  out.drift.assign(M, 0.0);
  out.vol.assign(M, 0.0);
  out.dW.assign(dW.begin(), dW.begin() + M);
  out.jump_return.assign(M + 1, 0.0);
  std::vector<int> snapped;
  for (double tau : jumps.times) snapped.push_back(grid.snap(tau));
  for (int i = 0; i <= M; ++i) {
    int c = 0;
    for (int s : snapped)
      if (s <= i) ++c;
    out.regime[i] = c;
  }
  for (int i = 0; i < M; ++i) {
    const int k = std::min(out.regime[i], R - 1);
    out.drift[i] = market.b[k];
    out.vol[i] = market.sigma[k];
    double s = out.S1[i] * std::exp((market.b[k] - 0.5 * market.sigma[k] * market.sigma[k]) * dt +
                                    market.sigma[k] * dW[i]);
    for (std::size_t j = 0; j < snapped.size(); ++j) {
      if (snapped[j] != i + 1) continue;
      // The jump of tau_{j+1} uses the regime in force just before it.
      const int kr = std::min(static_cast<int>(j), R - 1);
      const double beta = market.beta[kr][jumps.marks[j]];
      s *= 1.0 + beta;
      out.jump_return[i + 1] += beta;
    }
    out.S1[i + 1] = s;
  }
  return out;
}

std::vector<double> simulate_wealth(std::span<const double> pi, const MarketPath& market,
                                    const TimeGrid& grid, double x) {
  const int M = grid.M;
  std::vector<double> X(M + 1, x);
  for (int i = 0; i < M; ++i)
    X[i + 1] = X[i] + pi[i] * (market.drift[i] * grid.dt() + market.vol[i] * market.dW[i] +
                               market.jump_return[i + 1]);
  return X;
}

}  // namespace cbsde
