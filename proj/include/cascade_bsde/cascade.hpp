#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cascade_bsde/brownian_bsde.hpp"
#include "cascade_bsde/jump_model.hpp"
#include "cascade_bsde/scenario.hpp"

namespace cbsde {

inline constexpr int kMaxJumps = 3;
inline constexpr std::size_t kMaxMarks = 64;

// Past jumps as grid indices: theta[j] is a TimeGrid node, marks[j] a MarkGrid index.
struct History {
  std::vector<int> theta;
  std::vector<int> marks;

  int size() const { return static_cast<int>(theta.size()); }
  int last_theta() const { return theta.empty() ? 0 : theta.back(); }
  History extended(int th, int e) const;
  std::vector<double> times(const TimeGrid& grid) const;
};

struct DriverArgs {
  int k = 0;      // number of past jumps
  int i = 0;      // grid node
  double t = 0.0;
  double x = 0.0;  // W_t
  double y = 0.0;
  double z = 0.0;
  std::span<const double> u;       // Y^{k+1}(.., t, e) - y per mark; zeros at k = n
  std::span<const double> lambda;  // lambda^{k+1}_t(e) per mark; zeros at k = n
  const History* history = nullptr;
  const MarkGrid* marks = nullptr;
};

// f^k for every level, called with the sectioned next-level value already plugged in.
struct DecomposedDriver {
  std::function<double(const DriverArgs&)> f;  // empty means f = 0
  DriverClass driver_class = DriverClass::lipschitz;
  // Lipschitz constants of the plugged-in driver in (y, z); the y constant
  // must include the dependence through u = Y^{k+1} - y.
  double lipschitz_y = 0.0;
  double lipschitz_z = 0.0;
  double z_clip = kInf;
};

// xi^k(theta_(k), e_(k), W_T); the level is history.size().
struct DecomposedTerminal {
  std::function<double(const History&, double x)> xi;
};

struct CascadeOptions {
  Backend backend = Backend::tree;
  SolverOptions solver;
  // Store Y^k by (theta_k, e_k) only; valid when the data depend on the
  // history only through the last jump.
  bool compress_last_jump = false;
  // Per-level cap on sup |Y^k|.
  double cap = kInf;
  // Growth constant C of the quadratic truncation; 0 disables it.
  double truncation = 0.0;
  int threads = 0;
};

class CascadeSolution {
 public:
  int n() const { return n_; }
  const TimeGrid& grid() const { return grid_; }
  const MarkGrid& marks() const { return model_->marks(); }
  const DensityModel& model() const { return *model_; }
  Backend backend() const { return backend_; }
  bool compressed() const { return compressed_; }
  double cap() const { return cap_; }

  const std::vector<History>& histories(int k) const { return hist_[k]; }
  const BsdeSolution& solution(const History& h) const;
  const BsdeSolution& solution(int k, std::size_t idx) const { return sol_[k][idx]; }
  const IntensityRow& intensity(const History& h) const;
  // Largest |Y^k| seen by any sub-solve.
  double sup_abs_y() const;

  // Effective (clipped/truncated) data used by the solve.
  double terminal(const History& h, double x) const;
  double driver(const History& h, int i, double x, double y, double z, std::span<const double> u) const;
  // u(e) = Y^{k+1}_i(h (+) (i, e), x) - y, written into out.
  void sectioned_u(const History& h, int i, double x, double y, std::span<double> out) const;

 private:
  friend CascadeSolution solve_cascade(const DecomposedTerminal&, const DecomposedDriver&,
                                       DensityModelPtr, const TimeGrid&, const CascadeOptions&,
                                       std::shared_ptr<const LsmcContext>);
  std::uint64_t key(const History& h) const;
  std::size_t index(const History& h) const;

  int n_ = 0;
  TimeGrid grid_;
  DensityModelPtr model_;
  Backend backend_ = Backend::tree;
  bool compressed_ = false;
  double cap_ = kInf;
  double truncation_ = 0.0;
  double terminal_bound_ = kInf;
  DecomposedTerminal terminal_;
  DecomposedDriver driver_;
  std::vector<std::vector<History>> hist_;
  std::vector<std::unordered_map<std::uint64_t, std::size_t>> index_;
  std::vector<std::vector<BsdeSolution>> sol_;
  std::vector<std::vector<IntensityRow>> lambda_;
};

// Solves level n down to 0 over every ordered (theta_(k), e_(k)) grid tuple.
CascadeSolution solve_cascade(const DecomposedTerminal& terminal, const DecomposedDriver& driver,
                              DensityModelPtr model, const TimeGrid& grid, const CascadeOptions& opts,
                              std::shared_ptr<const LsmcContext> ctx = nullptr);

// (Y, Z, U) along one scenario.
struct GluedPath {
  std::size_t n_marks = 0;
  std::vector<double> Y;       // family k with tau_k <= t_i < tau_{k+1}
  std::vector<double> Y_left;  // Y_{t_i-}: family k with tau_k < t_i <= tau_{k+1}
  std::vector<double> Z;       // predictable: family k with tau_k < t_i <= tau_{k+1}
  std::vector<double> Z_step;  // integrand on (t_i, t_{i+1}]
  std::vector<double> U;       // (M + 1) x n_marks, predictable; 0 after tau_n
  std::vector<double> U_step;  // M x n_marks, integrand on (t_i, t_{i+1}]
  std::vector<int> regime;     // #{k : snapped tau_k <= i}
  std::vector<int> jump_nodes;  // snapped nodes of jumps <= T
  std::vector<int> jump_marks;
  std::vector<History> histories;  // history in force after each realized jump, index = regime

  double u(int i, std::size_t e) const { return U[static_cast<std::size_t>(i) * n_marks + e]; }
  std::span<const double> u_step(int i) const {
    return {U_step.data() + static_cast<std::size_t>(i) * n_marks, n_marks};
  }
};

GluedPath glue(const CascadeSolution& cascade, const MarkedJumpSample& jumps, std::span<const double> W);

// Largest |Y_tau - Y_tau- - U_tau(zeta)| over the realized jumps of a glued path.
double jump_identity_residual(const GluedPath& path);

struct ResidualStats {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  double mean = 0.0;
  double std_err = 0.0;
  std::size_t paths = 0;
};

// R = xi + sum f dt - sum Z dW - sum U(zeta) - Y_0 along each scenario.
ResidualStats verify_bsde_residual(const CascadeSolution& cascade, const BrownianBatch& batch,
                                   const JumpSampler& sampler, std::uint64_t jump_seed, int threads = 0);

struct ComparisonData {
  DecomposedTerminal terminal;
  DecomposedDriver driver;
};

struct ComparisonVerdict {
  bool pass = false;
  bool terminal_ordered = false;
  bool driver_ordered = false;
  double tolerance = 0.0;
  double min_gap = kInf;  // min over checked nodes of Y' - Y
  std::size_t nodes_checked = 0;
  std::string first_violation;
};

// Checks Y <= Y' for data (xi, f) <= (xi', f'). The driver ordering is
// verified numerically along the first cascade with each side's own
// next-level values plugged in. Tree solves are compared on every lattice
// node and along the scenarios with zero tolerance; lsmc along the scenarios
// within 3 combined standard errors.
ComparisonVerdict comparison_harness(const ComparisonData& lower, const ComparisonData& upper,
                                     DensityModelPtr model, const TimeGrid& grid,
                                     const CascadeOptions& opts, std::shared_ptr<const LsmcContext> ctx,
                                     const BrownianBatch& scenarios, std::uint64_t jump_seed);

// Rows `k,theta_indices,mark_indices,time_index,state_index,Y,Z`. Tree
// solutions are written on the lattice (state_index = up-moves); regression
// solutions on 21 states x = (j - 10) / 10 * 3 sqrt(t). With stride > 1 only
// time indices, and lattice states, that are multiples of stride are kept,
// together with the terminal time and the top lattice state.
void write_cascade_csv(const CascadeSolution& cascade, std::ostream& out, int stride = 1);

}  // namespace cbsde
