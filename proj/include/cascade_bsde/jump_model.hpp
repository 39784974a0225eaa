#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cascade_bsde/grid.hpp"
#include "cascade_bsde/rng.hpp"

namespace cbsde {

// Denominator floor for the intensity ratio.
inline constexpr double kGammaFloor = 1e-12;

// Realized jump times (nondecreasing, +inf when the jump falls past the
// support horizon) and mark indices into the MarkGrid (-1 when absent).
struct MarkedJumpSample {
  std::vector<double> times;
  std::vector<int> marks;

  // Number of jumps with tau_k <= t.
  int count_until(double t) const;
};

// Joint density of (tau_1..tau_n, zeta_1..zeta_n) with respect to dtheta de,
// independent of the Brownian path. Marks are passed as MarkGrid indices.
class DensityModel {
 public:
  virtual ~DensityModel() = default;

  int n() const { return n_; }
  const MarkGrid& marks() const { return marks_; }
  double support_horizon() const { return horizon_; }
  double quad_step() const { return quad_step_; }
  // Declared bound on the total intensity, or +inf when none is declared.
  double intensity_bound() const { return intensity_bound_; }
  virtual std::string name() const = 0;

  // Joint density; zero when theta is not ordered.
  virtual double density(std::span<const double> theta, std::span<const int> marks) const = 0;

  // Density of the first k jumps, i.e. the joint density integrated over the
  // remaining n - k jumps. head(0) = 1 and head(n) = density.
  virtual double head(int k, std::span<const double> theta, std::span<const int> marks) const = 0;

  // Conditional density driven by the Brownian path. Not supported.
  virtual bool path_dependent() const { return false; }

 protected:
  DensityModel(int n, MarkGrid marks, double horizon, double quad_step, double intensity_bound);

 private:
  int n_;
  MarkGrid marks_;
  double horizon_;
  double quad_step_;
  double intensity_bound_;
};

using DensityModelPtr = std::shared_ptr<const DensityModel>;

// n = 1, density lambda0 * exp(-lambda0 * theta) * q(e) with q uniform on the marks.
DensityModelPtr make_exponential_model(double lambda0, MarkGrid marks = MarkGrid::singleton(),
                                       double horizon = 40.0, double quad_step = 1e-3);

// Arrival times of a Poisson process of rate lambda0, with iid uniform marks:
// density lambda0^n * exp(-lambda0 * theta_n) * prod q(e_j) on theta ordered.
DensityModelPtr make_product_exponential_model(int n, double lambda0,
                                               MarkGrid marks = MarkGrid::singleton(),
                                               double horizon = 40.0, double quad_step = 1e-3);

// Density tabulated at the nodes of a theta grid (multilinear in theta, zero
// outside the table). Rows follow `theta_1,...,theta_n,e_1,...,e_n,density`.
DensityModelPtr make_tabulated_model(int n, std::vector<double> theta_nodes, MarkGrid marks,
                                     std::vector<double> values, double quad_step = 1e-3);
DensityModelPtr load_tabulated_model(const std::string& csv_path,
                                     std::vector<double> mark_weights = {},
                                     double quad_step = 1e-3);

// gamma^k_t(theta_(k), e_(k)): mass of {tau_(k) in dtheta, zeta_(k) in de, tau_{k+1} > t}.
double marginal_gamma(const DensityModel& model, int k, double t, std::span<const double> theta,
                      std::span<const int> marks);

struct IntensityValue {
  double value = 0.0;
  bool floored = false;  // denominator below kGammaFloor
};

// lambda^k_t(e | theta_(k-1), e_(k-1)).
IntensityValue intensity(const DensityModel& model, int k, double t, int mark,
                         std::span<const double> theta, std::span<const int> marks);

// Total intensity lambda_t(e) along a realized scenario.
double total_intensity(const DensityModel& model, const MarkedJumpSample& sample, double t, int mark);

// lambda^{k+1}_{t_i}(e | history) at every grid node i >= start for a fixed
// history of k jumps, built by cumulative quadrature along the grid.
struct IntensityRow {
  int start = 0;
  std::size_t n_marks = 0;
  std::vector<double> values;  // (M + 1 - start) x n_marks
  int floored = 0;

  double at(int i, std::size_t e) const { return values[(i - start) * n_marks + e]; }
  std::span<const double> row(int i) const {
    return {values.data() + (i - start) * n_marks, n_marks};
  }
};

IntensityRow intensity_row(const DensityModel& model, const TimeGrid& grid,
                           std::span<const double> theta, std::span<const int> marks);

// Sequential inverse-CDF sampler. The first-jump CDF is tabulated once.
class JumpSampler {
 public:
  explicit JumpSampler(DensityModelPtr model);

  MarkedJumpSample sample(const PathStream& stream) const;
  const DensityModel& model() const { return *model_; }

 private:
  double draw_time(int k, std::span<const double> theta, std::span<const int> marks, double u) const;
  int draw_mark(int k, std::span<const double> theta, std::span<const int> marks, double tau,
                double u) const;

  DensityModelPtr model_;
  std::vector<double> first_cdf_;  // on nodes j * quad_step
};

MarkedJumpSample sample_jumps(const JumpSampler& sampler, const PathStream& stream);

using JumpTestFunction = std::function<double(double t, int mark, const MarkedJumpSample&)>;

struct CompensatorResult {
  double lhs = 0.0;     // E[sum of U over jumps <= T]
  double rhs = 0.0;     // E[int_0^T int_E U lambda de ds]
  double stderr_lhs = 0.0;
  double stderr_rhs = 0.0;
  double std_err = 0.0;  // combined, sqrt(se_lhs^2 + se_rhs^2)
};

// The two sides use independent jump streams derived from `seed`.
CompensatorResult compensator_check(const JumpSampler& sampler, const JumpTestFunction& U, double T,
                                    std::size_t paths, std::uint64_t seed, int threads = 0);

// Nested trapezoid of the joint density over the ordered simplex in [0, horizon]^n x E^n.
double quadrature_mass(const DensityModel& model, double horizon, double step);

}  // namespace cbsde
