#include "cascade_bsde/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cascade_bsde/errors.hpp"

namespace cbsde {

TimeGrid::TimeGrid(double horizon, int steps) : T(horizon), M(steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("T", "must be positive and finite");
  if (steps < 1) throw ValidationError("M", "must be >= 1");
}

int TimeGrid::snap(double tau) const {
  if (!(tau <= T)) return M + 1;
  if (tau <= 0.0) return 0;
  // Tolerance absorbs rounding when tau sits on a node.
  const double x = tau / dt();
  const double r = std::round(x);
  const int idx = std::abs(x - r) < 1e-9 ? static_cast<int>(r) : static_cast<int>(std::ceil(x));
  return std::min(idx, M);
}

MarkGrid::MarkGrid(std::vector<double> pts, std::vector<double> w)
    : points(std::move(pts)), weights(std::move(w)) {
  validate();
}

MarkGrid MarkGrid::singleton() { return MarkGrid({0.0}, {1.0}); }

double MarkGrid::total_weight() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

void MarkGrid::validate() const {
  if (points.empty()) throw ValidationError("marks", "mark grid is empty");
  if (points.size() != weights.size()) throw ValidationError("mark_weights", "length differs from marks");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("mark_weights", "weights must be positive");
  std::vector<double> sorted = points;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("marks", "mark points must be distinct");
}

}  // namespace cbsde
