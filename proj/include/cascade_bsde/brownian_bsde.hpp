#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cascade_bsde/grid.hpp"
#include "cascade_bsde/scenario.hpp"

namespace cbsde {

enum class DriverClass { zero, affine, lipschitz, quadratic_z };
enum class Backend { closed_form, tree, lsmc };

std::string to_string(Backend b);
Backend parse_backend(const std::string& s);

// f(i, x, y, z) at grid node i with Markov state x = W_{t_i}.
using BsdeDriver = std::function<double(int i, double x, double y, double z)>;
using BsdeTerminal = std::function<double(double x)>;

// Y_t = xi(X_T) + int_t^T f(s, X_s, Y_s, Z_s) ds - int_t^T Z_s dW_s on [t_start, T].
struct BrownianBsdeSpec {
  TimeGrid grid;
  int start = 0;
  BsdeTerminal terminal;
  BsdeDriver driver;  // empty means f = 0
  DriverClass driver_class = DriverClass::zero;
  double lipschitz_y = 0.0;
  double lipschitz_z = 0.0;
  double terminal_bound = kInf;  // xi is clipped into [-bound, bound]
  double cap = kInf;             // hard limit on sup |Y|
  double z_clip = kInf;          // z-range truncation, required for quadratic_z on lsmc
};

struct SolverOptions {
  bool picard = false;
  double picard_tol = 1e-8;
  int picard_max = 50;
  // Require the explicit tree step to be monotone in the children values.
  bool monotone_guard = false;
  // Relative allowance on the a-priori bound for regression noise (lsmc only).
  double lsmc_bound_slack = 0.25;
};

struct BsdeDiagnostics {
  double sup_y = 0.0;
  double a_priori_bound = kInf;
  double sup_driver_at_zero = 0.0;
  int picard_iterations = 0;  // max over nodes
  double max_condition = 0.0;
  std::size_t z_clip_hits = 0;
  std::size_t y_clip_hits = 0;  // lsmc estimates pulled back into the a-priori range
  double y0_stderr = 0.0;
};

// Exactly monotone explicit tree step for these constants.
bool tree_step_monotone(double dt, double lipschitz_y, double lipschitz_z);

class LsmcContext;

class BsdeSolution {
 public:
  struct Tree {
    int start = 0;
    double sqrt_dt = 0.0;
    std::vector<std::size_t> offset;  // per node, index into y/z
    std::vector<double> y, z;
  };
  struct Regression {
    std::shared_ptr<const LsmcContext> ctx;
    int start = 0;
    std::vector<Eigen::VectorXd> y, z;  // per node coefficients
    std::vector<double> y_bound;        // per node range of the truncated estimator
  };
  struct ClosedForm {
    std::function<double(int, double)> y, z;
  };

  BsdeSolution() = default;
  BsdeSolution(TimeGrid grid, int start, Tree t, BsdeDiagnostics d);
  BsdeSolution(TimeGrid grid, int start, Regression r, BsdeDiagnostics d);
  BsdeSolution(TimeGrid grid, int start, ClosedForm c, BsdeDiagnostics d);

  Backend backend() const;
  const TimeGrid& grid() const { return grid_; }
  int start() const { return start_; }
  double y(int i, double x) const;
  double z(int i, double x) const;
  // Y at the start node; the state there is W_{t_start}, which is 0 only when start == 0.
  double y0() const { return y(start_, 0.0); }
  const BsdeDiagnostics& diagnostics() const { return diag_; }
  // Tree lattice values (tree backend only): node i, m up-moves.
  double tree_y(int i, int m) const;
  double tree_z(int i, int m) const;

 private:
  TimeGrid grid_;
  int start_ = 0;
  std::variant<std::monostate, Tree, Regression, ClosedForm> store_;
  BsdeDiagnostics diag_;
};

// Gaussian batch materialized once, with per-node normal equations for a
// Hermite polynomial basis in W_t / sqrt(t) shared by every solve.
class LsmcContext {
 public:
  LsmcContext(const BrownianBatch& batch, int degree, int threads = 0);

  const TimeGrid& grid() const { return grid_; }
  std::size_t paths() const { return paths_; }
  int degree() const { return degree_; }
  double W(std::size_t p, int i) const { return w_[static_cast<std::size_t>(i) * stride_ + p]; }
  double dW(std::size_t p, int i) const { return W(p, i + 1) - W(p, i); }
  int basis_size(int i) const { return nodes_[i].dim; }
  double condition(int i) const { return nodes_[i].cond; }
  int threads() const { return threads_; }

  // Least-squares coefficients of target (one value per path) on the node-i basis.
  Eigen::VectorXd project(int i, std::span<const double> target) const;
  double evaluate(int i, const Eigen::VectorXd& coef, double x) const;
  void basis(int i, double x, double* out) const;

 private:
  struct Node {
    int dim = 1;
    double scale = 1.0;
    double cond = 1.0;
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
  };

  TimeGrid grid_;
  std::size_t paths_;
  int degree_;
  int threads_;
  std::size_t stride_;
  std::vector<double> w_;
  std::vector<Node> nodes_;
};

BsdeSolution solve_tree(const BrownianBsdeSpec& spec, const SolverOptions& opts = {});
BsdeSolution solve_lsmc(const BrownianBsdeSpec& spec, std::shared_ptr<const LsmcContext> ctx,
                        const SolverOptions& opts = {});

// Linear driver a(t) y + b(t) z + c(t) with deterministic coefficients.
struct LinearBsdeSpec {
  TimeGrid grid;
  int start = 0;
  std::function<double(double t, double x)> a, b, c;
  enum class Terminal { affine, exp_affine } shape = Terminal::affine;
  double k0 = 0.0, k1 = 0.0;  // xi = k0 + k1 X_T, or k0 exp(k1 X_T)
};

// Y_t = Gamma_t^{-1} E[xi Gamma_T + int_t^T c_s Gamma_s ds | F_t]; rejects
// coefficients that depend on the state.
BsdeSolution solve_linear(const LinearBsdeSpec& spec);

// Clamp f into +-C(1 + |y| + |z|^2 + mark_term) and xi into [-C, C].
double envelope_clamp(double f, double C, double y, double z, double mark_term = 0.0);
BrownianBsdeSpec truncate_quadratic(const BrownianBsdeSpec& spec, double C);

}  // namespace cbsde
