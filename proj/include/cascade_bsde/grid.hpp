#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace cbsde {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform grid t_i = i*T/M on [0, T].
struct TimeGrid {
  double T = 1.0;
  int M = 1;

  TimeGrid() = default;
  TimeGrid(double horizon, int steps);

  double dt() const { return T / M; }
  double t(int i) const { return i == M ? T : i * dt(); }
  int nodes() const { return M + 1; }
  // First node >= tau, or M + 1 when tau > T (the jump happens after the horizon).
  int snap(double tau) const;
};

// Quadrature points on the mark space E with positive weights.
struct MarkGrid {
  std::vector<double> points;
  std::vector<double> weights;

  MarkGrid() = default;
  MarkGrid(std::vector<double> pts, std::vector<double> w);

  // A single mark of unit weight: the unmarked case.
  static MarkGrid singleton();

  std::size_t size() const { return points.size(); }
  double total_weight() const;
  void validate() const;
};

}  // namespace cbsde
