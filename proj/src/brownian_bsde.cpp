#include "cascade_bsde/brownian_bsde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/parallel.hpp"

namespace cbsde {

namespace {

constexpr std::size_t kChunk = 4096;

double clip(double v, double bound) { return std::clamp(v, -bound, bound); }

double a_priori_bound(double xi_sup, double f0_sup, double ly, double horizon) {
  return std::exp(ly * horizon) * (xi_sup + horizon * f0_sup);
}

void check_spec(const BrownianBsdeSpec& spec) {
  if (!spec.terminal) throw ValidationError("terminal", "terminal map is required");
  if (spec.start < 0 || spec.start > spec.grid.M) throw ValidationError("start", "must lie in 0..M");
  if (spec.lipschitz_y < 0.0 || spec.lipschitz_z < 0.0)
    throw ValidationError("lipschitz", "constants must be >= 0");
}

// Picard fixed point y = e + dt f(y); returns iterations used.
int picard_solve(const BsdeDriver& f, int i, double x, double e, double z, double dt,
                 const SolverOptions& opts, double& y) {
  y = e + dt * f(i, x, e, z);
  if (!opts.picard) return 0;
  int it = 0;
  for (; it < opts.picard_max; ++it) {
    const double next = e + dt * f(i, x, y, z);
    const double diff = std::abs(next - y);
    y = next;
    if (diff <= opts.picard_tol) return it + 1;
  }
  return it;
}

}  // namespace

std::string to_string(Backend b) {
  switch (b) {
    case Backend::closed_form:
      return "closed_form";
    case Backend::tree:
      return "tree";
    case Backend::lsmc:
      return "lsmc";
  }
  return "unknown";
}

Backend parse_backend(const std::string& s) {
  if (s == "tree") return Backend::tree;
  if (s == "lsmc") return Backend::lsmc;
  if (s == "closed_form") return Backend::closed_form;
  throw ValidationError("backend", "expected tree or lsmc, got '" + s + "'");
}

bool tree_step_monotone(double dt, double ly, double lz) {
  const double L = std::max(ly, lz);
  if (L > 0.0 && dt > 1.0 / (2.0 * L)) return false;
  return dt * ly + std::sqrt(dt) * lz <= 1.0;
}

BsdeSolution::BsdeSolution(TimeGrid grid, int start, Tree t, BsdeDiagnostics d)
    : grid_(grid), start_(start), store_(std::move(t)), diag_(d) {}
BsdeSolution::BsdeSolution(TimeGrid grid, int start, Regression r, BsdeDiagnostics d)
    : grid_(grid), start_(start), store_(std::move(r)), diag_(d) {}
BsdeSolution::BsdeSolution(TimeGrid grid, int start, ClosedForm c, BsdeDiagnostics d)
    : grid_(grid), start_(start), store_(std::move(c)), diag_(d) {}

Backend BsdeSolution::backend() const {
  if (std::holds_alternative<Tree>(store_)) return Backend::tree;
  if (std::holds_alternative<Regression>(store_)) return Backend::lsmc;
  return Backend::closed_form;
}

namespace {

double tree_eval(const BsdeSolution::Tree& t, const std::vector<double>& v, int i, double x) {
  const double u = 0.5 * (x / t.sqrt_dt + i);
  const double r = std::round(u);
  const std::size_t base = t.offset[i - t.start];
  if (std::abs(u - r) < 1e-7) {
    const int m = std::clamp(static_cast<int>(r), 0, i);
    return v[base + m];
  }
  if (u <= 0.0) return v[base];
  if (u >= i) return v[base + i];
  const int m0 = static_cast<int>(std::floor(u));
  const double f = u - m0;
  return (1.0 - f) * v[base + m0] + f * v[base + m0 + 1];
}

}  // namespace

double BsdeSolution::y(int i, double x) const {
  if (i < start_ || i > grid_.M) throw std::out_of_range("BsdeSolution::y: node outside the solve interval");
  if (const auto* t = std::get_if<Tree>(&store_)) return tree_eval(*t, t->y, i, x);
  if (const auto* r = std::get_if<Regression>(&store_))
    return clip(r->ctx->evaluate(i, r->y[i - r->start], x), r->y_bound[i - r->start]);
  if (const auto* c = std::get_if<ClosedForm>(&store_)) return c->y(i, x);
  throw std::logic_error("empty BsdeSolution");
}

double BsdeSolution::z(int i, double x) const {
  if (i < start_ || i > grid_.M) throw std::out_of_range("BsdeSolution::z: node outside the solve interval");
  if (const auto* t = std::get_if<Tree>(&store_)) return tree_eval(*t, t->z, i, x);
  if (const auto* r = std::get_if<Regression>(&store_)) return r->ctx->evaluate(i, r->z[i - r->start], x);
  if (const auto* c = std::get_if<ClosedForm>(&store_)) return c->z(i, x);
  throw std::logic_error("empty BsdeSolution");
}

double BsdeSolution::tree_y(int i, int m) const {
  const auto& t = std::get<Tree>(store_);
  return t.y[t.offset[i - t.start] + m];
}

double BsdeSolution::tree_z(int i, int m) const {
  const auto& t = std::get<Tree>(store_);
  return t.z[t.offset[i - t.start] + m];
}

BsdeSolution solve_tree(const BrownianBsdeSpec& spec, const SolverOptions& opts) {
  check_spec(spec);
  const TimeGrid& g = spec.grid;
  const int a = spec.start;
  const int M = g.M;
  const double dt = g.dt();
  const bool monotone = tree_step_monotone(dt, spec.lipschitz_y, spec.lipschitz_z);
  if (opts.monotone_guard && !monotone)
    throw BoundViolation("tree step is not monotone: dt=" + std::to_string(dt) +
                         " exceeds 1/(2L) for L=" +
                         std::to_string(std::max(spec.lipschitz_y, spec.lipschitz_z)));

  BsdeSolution::Tree t;
  t.start = a;
  t.sqrt_dt = std::sqrt(dt);
  t.offset.resize(M - a + 1);
  std::size_t total = 0;
  for (int i = a; i <= M; ++i) {
    t.offset[i - a] = total;
    total += static_cast<std::size_t>(i) + 1;
  }
  t.y.assign(total, 0.0);
  t.z.assign(total, 0.0);

  BsdeDiagnostics d;
  double xi_sup = 0.0;
  {
    const std::size_t base = t.offset[M - a];
    for (int m = 0; m <= M; ++m) {
      const double x = (2 * m - M) * t.sqrt_dt;
      const double xi = clip(spec.terminal(x), spec.terminal_bound);
      t.y[base + m] = xi;
      xi_sup = std::max(xi_sup, std::abs(xi));
    }
  }
  double sup_y = xi_sup;
  for (int i = M - 1; i >= a; --i) {
    const std::size_t base = t.offset[i - a];
    const std::size_t next = t.offset[i + 1 - a];
    for (int m = 0; m <= i; ++m) {
      const double x = (2 * m - i) * t.sqrt_dt;
      const double up = t.y[next + m + 1];
      const double dn = t.y[next + m];
      const double e = 0.5 * (up + dn);
      double z = (up - dn) / (2.0 * t.sqrt_dt);
      if (std::abs(z) > spec.z_clip) {
        z = clip(z, spec.z_clip);
        ++d.z_clip_hits;
      }
      double y = e;
      if (spec.driver) {
        d.picard_iterations =
            std::max(d.picard_iterations, picard_solve(spec.driver, i, x, e, z, dt, opts, y));
        d.sup_driver_at_zero = std::max(d.sup_driver_at_zero, std::abs(spec.driver(i, x, 0.0, 0.0)));
      }
      t.y[base + m] = y;
      t.z[base + m] = z;
      sup_y = std::max(sup_y, std::abs(y));
    }
  }
  d.sup_y = sup_y;
  d.a_priori_bound = a_priori_bound(xi_sup, d.sup_driver_at_zero, spec.lipschitz_y, g.T - g.t(a));
  if (sup_y > spec.cap)
    throw BoundViolation("sup |Y| = " + std::to_string(sup_y) + " exceeds cap " + std::to_string(spec.cap));
  if (monotone && spec.driver_class != DriverClass::quadratic_z &&
      sup_y > d.a_priori_bound * (1.0 + 1e-9) + 1e-12)
    throw BoundViolation("tree solve violates the a-priori bound: sup |Y| = " + std::to_string(sup_y) +
                         " > " + std::to_string(d.a_priori_bound));
  return BsdeSolution(g, a, std::move(t), d);
}

LsmcContext::LsmcContext(const BrownianBatch& batch, int degree, int threads)
    : grid_(batch.grid), paths_(batch.paths), degree_(degree), threads_(threads),
      stride_(batch.paths) {
  if (degree < 0 || degree > 8) throw ValidationError("basis_degree", "must lie in 0..8");
  if (batch.kind != IncrementKind::gaussian)
    throw ValidationError("backend", "lsmc needs Gaussian increments");
  if (paths_ < 2) throw ValidationError("paths", "lsmc needs at least two paths");
  {
    const std::vector<double> by_path = materialize_paths(batch, threads);
    const std::size_t n = static_cast<std::size_t>(grid_.M) + 1;
    w_.resize(by_path.size());
    for (std::size_t p = 0; p < paths_; ++p)
      for (std::size_t i = 0; i < n; ++i) w_[i * paths_ + p] = by_path[p * n + i];
  }
  nodes_.resize(grid_.M + 1);
  for (int i = 0; i <= grid_.M; ++i) {
    Node& nd = nodes_[i];
    nd.dim = grid_.t(i) > 0.0 ? degree_ + 1 : 1;
    nd.scale = grid_.t(i) > 0.0 ? std::sqrt(grid_.t(i)) : 1.0;
    const std::size_t dim = static_cast<std::size_t>(nd.dim);
    const std::size_t chunks = chunk_count(paths_, kChunk);
    std::vector<Eigen::MatrixXd> partial(chunks, Eigen::MatrixXd::Zero(nd.dim, nd.dim));
    parallel_chunks(paths_, kChunk, threads_, [&](std::size_t c, std::size_t b, std::size_t e) {
      std::vector<double> psi(dim);
      Eigen::MatrixXd& G = partial[c];
      for (std::size_t p = b; p < e; ++p) {
        basis(i, W(p, i), psi.data());
        for (std::size_t r = 0; r < dim; ++r)
          for (std::size_t s = 0; s <= r; ++s) G(r, s) += psi[r] * psi[s];
      }
    });
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nd.dim, nd.dim);
    for (const auto& P : partial) G += P;
    G /= static_cast<double>(paths_);
    G = G.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    nd.cond = lo > 0.0 ? hi / lo : kInf;
    if (!(nd.cond < 1e12))
      throw std::runtime_error("lsmc regression failure at node " + std::to_string(i) +
                               ": rank-deficient design, condition number " + std::to_string(nd.cond));
    nd.ldlt.compute(G);
  }
}

void LsmcContext::basis(int i, double x, double* out) const {
  const Node& nd = nodes_[i];
  const double u = x / nd.scale;
  out[0] = 1.0;
  if (nd.dim > 1) out[1] = u;
  for (int j = 2; j < nd.dim; ++j) out[j] = u * out[j - 1] - (j - 1) * out[j - 2];
}

double LsmcContext::evaluate(int i, const Eigen::VectorXd& coef, double x) const {
  double psi[16];
  basis(i, x, psi);
  double acc = 0.0;
  for (int j = 0; j < coef.size(); ++j) acc += coef[j] * psi[j];
  return acc;
}

Eigen::VectorXd LsmcContext::project(int i, std::span<const double> target) const {
  const Node& nd = nodes_[i];
  const std::size_t dim = static_cast<std::size_t>(nd.dim);
  const std::size_t chunks = chunk_count(paths_, kChunk);
  std::vector<Eigen::VectorXd> partial(chunks, Eigen::VectorXd::Zero(nd.dim));
  parallel_chunks(paths_, kChunk, threads_, [&](std::size_t c, std::size_t b, std::size_t e) {
    double psi[16];
    Eigen::VectorXd& v = partial[c];
    for (std::size_t p = b; p < e; ++p) {
      basis(i, W(p, i), psi);
      for (std::size_t r = 0; r < dim; ++r) v[r] += psi[r] * target[p];
    }
  });
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nd.dim);
  for (const auto& v : partial) rhs += v;
  rhs /= static_cast<double>(paths_);
  return nd.ldlt.solve(rhs);
}

BsdeSolution solve_lsmc(const BrownianBsdeSpec& spec, std::shared_ptr<const LsmcContext> ctx,
                        const SolverOptions& opts) {
  check_spec(spec);
  if (!ctx) throw ValidationError("backend", "lsmc needs a regression context");
  if (ctx->grid().M != spec.grid.M || ctx->grid().T != spec.grid.T)
    throw ValidationError("grid", "lsmc context grid differs from the BSDE grid");
  if (spec.driver_class == DriverClass::quadratic_z && !std::isfinite(spec.z_clip))
    throw ValidationError("z_clip", "quadratic drivers need a finite z truncation on lsmc");
  const LsmcContext& C = *ctx;
  const TimeGrid& g = spec.grid;
  const int a = spec.start;
  const int M = g.M;
  const double dt = g.dt();
  const std::size_t P = C.paths();
  const std::size_t chunks = chunk_count(P, kChunk);

  BsdeSolution::Regression reg;
  reg.ctx = ctx;
  reg.start = a;
  reg.y.resize(M - a + 1);
  reg.z.resize(M - a + 1);
  reg.y_bound.assign(M - a + 1, kInf);
  // Truncated estimator: conditional expectations are pulled back into the
  // a-priori range (or the cap for quadratic drivers) before the driver step.
  const bool bounded = spec.driver_class != DriverClass::quadratic_z;

  BsdeDiagnostics d;
  // Acc holds xi + sum_{j > i} f_j dt along each path: every node regresses
  // the pathwise target, so projection errors do not compound backwards.
  std::vector<double> Y(P), Acc(P), target(P);
  double xi_sup = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    Y[p] = clip(spec.terminal(C.W(p, M)), spec.terminal_bound);
    xi_sup = std::max(xi_sup, std::abs(Y[p]));
  }
  Acc = Y;
  reg.y[M - a] = C.project(M, Y);
  reg.z[M - a] = Eigen::VectorXd::Zero(C.basis_size(M));
  reg.y_bound[M - a] = bounded ? xi_sup : spec.cap;
  double sup_y = xi_sup;

  struct ChunkStats {
    double sup_y = 0, sup_f0 = 0, sum = 0, sum2 = 0;
    int picard = 0;
    std::size_t clips = 0, yclips = 0;
  };
  for (int i = M - 1; i >= a; --i) {
    for (std::size_t p = 0; p < P; ++p) target[p] = Acc[p] * C.dW(p, i) / dt;
    const Eigen::VectorXd cE = C.project(i, Acc);
    const Eigen::VectorXd cZ = C.project(i, target);
    std::vector<ChunkStats> stats(chunks);
    const double horizon = g.T - g.t(i);
    const double f0_prev = d.sup_driver_at_zero;
    parallel_chunks(P, kChunk, C.threads(), [&](std::size_t c, std::size_t b, std::size_t e) {
      ChunkStats& s = stats[c];
      for (std::size_t p = b; p < e; ++p) {
        const double x = C.W(p, i);
        double ev = C.evaluate(i, cE, x);
        const double f0 = spec.driver && bounded ? std::abs(spec.driver(i, x, 0.0, 0.0)) : 0.0;
        const double range =
            bounded ? a_priori_bound(xi_sup, std::max(f0_prev, f0), spec.lipschitz_y, horizon) : spec.cap;
        if (std::abs(ev) > range) {
          ev = clip(ev, range);
          ++s.yclips;
        }
        double z = C.evaluate(i, cZ, x);
        if (std::abs(z) > spec.z_clip) {
          z = clip(z, spec.z_clip);
          ++s.clips;
        }
        double y = ev;
        double fp = 0.0;
        if (spec.driver) {
          s.picard = std::max(s.picard, picard_solve(spec.driver, i, x, ev, z, dt, opts, y));
          s.sup_f0 = std::max(s.sup_f0, f0);
          fp = y - ev;
        }
        Y[p] = y;
        s.sup_y = std::max(s.sup_y, std::abs(y));
        Acc[p] += fp;
        const double pathwise = Acc[p];
        s.sum += pathwise;
        s.sum2 += pathwise * pathwise;
      }
    });
    double sum = 0, sum2 = 0;
    for (const auto& s : stats) {
      sup_y = std::max(sup_y, s.sup_y);
      d.sup_driver_at_zero = std::max(d.sup_driver_at_zero, s.sup_f0);
      d.picard_iterations = std::max(d.picard_iterations, s.picard);
      d.z_clip_hits += s.clips;
      d.y_clip_hits += s.yclips;
      sum += s.sum;
      sum2 += s.sum2;
    }
    reg.z[i - a] = cZ;
    reg.y[i - a] = C.project(i, Y);
    reg.y_bound[i - a] = bounded ? a_priori_bound(xi_sup, d.sup_driver_at_zero, spec.lipschitz_y, horizon) *
                                       (1.0 + opts.lsmc_bound_slack)
                                 : spec.cap;
    if (i == a) {
      const double n = static_cast<double>(P);
      const double mean = sum / n;
      d.y0_stderr = std::sqrt(std::max(0.0, sum2 / n - mean * mean) / (n - 1));
    }
  }
  for (int i = a; i <= M; ++i) d.max_condition = std::max(d.max_condition, C.condition(i));
  d.sup_y = sup_y;
  d.a_priori_bound = a_priori_bound(xi_sup, d.sup_driver_at_zero, spec.lipschitz_y, g.T - g.t(a));
  if (sup_y > spec.cap)
    throw BoundViolation("sup |Y| = " + std::to_string(sup_y) + " exceeds cap " + std::to_string(spec.cap));
  if (spec.driver_class != DriverClass::quadratic_z &&
      sup_y > d.a_priori_bound * (1.0 + opts.lsmc_bound_slack) + 1e-12)
    throw BoundViolation("lsmc solve violates the a-priori bound: sup |Y| = " + std::to_string(sup_y) +
                         " > " + std::to_string(d.a_priori_bound));
  return BsdeSolution(g, a, std::move(reg), d);
}

BsdeSolution solve_linear(const LinearBsdeSpec& spec) {
  const TimeGrid& g = spec.grid;
  if (spec.start < 0 || spec.start > g.M) throw ValidationError("start", "must lie in 0..M");
  auto coef = [](const std::function<double(double, double)>& f, double t, double x) {
    return f ? f(t, x) : 0.0;
  };
  for (const auto* f : {&spec.a, &spec.b, &spec.c}) {
    for (int i = spec.start; i <= g.M; i += std::max(1, g.M / 8)) {
      const double t = g.t(i);
      const double ref = coef(*f, t, 0.0);
      for (double x : {-1.3, 0.7, 2.1})
        if (std::abs(coef(*f, t, x) - ref) > 1e-14 * (1.0 + std::abs(ref)))
          throw ValidationError("coefficients", "stochastic coefficients: use solve_lsmc");
    }
  }

  // Integrals from t_i to T by composite Simpson on each cell.
  const int n = g.M - spec.start + 1;
  std::vector<double> A(n, 0.0), B(n, 0.0), Cint(n, 0.0);
  constexpr int kSub = 32;
  auto a_at = [&](double t) { return coef(spec.a, t, 0.0); };
  auto b_at = [&](double t) { return coef(spec.b, t, 0.0); };
  auto c_at = [&](double t) { return coef(spec.c, t, 0.0); };
  for (int i = g.M - 1; i >= spec.start; --i) {
    const int j = i - spec.start;
    const double t0 = g.t(i), t1 = g.t(i + 1);
    const double h = (t1 - t0) / kSub;
    double ia = 0, ib = 0, ic = 0;
    // int_{t0}^{t1} c(s) exp(int_{t0}^s a) ds, with the inner integral accumulated by Simpson.
    double inner = 0.0;
    for (int s = 0; s < kSub; ++s) {
      const double u0 = t0 + s * h, um = u0 + 0.5 * h, u1 = u0 + h;
      const double sa = h / 6.0 * (a_at(u0) + 4 * a_at(um) + a_at(u1));
      const double inner_m = inner + 0.5 * h / 6.0 * (a_at(u0) + 4 * a_at(u0 + 0.25 * h) + a_at(um));
      ic += h / 6.0 *
            (c_at(u0) * std::exp(inner) + 4 * c_at(um) * std::exp(inner_m) + c_at(u1) * std::exp(inner + sa));
      inner += sa;
      ia += sa;
      ib += h / 6.0 * (b_at(u0) + 4 * b_at(um) + b_at(u1));
    }
    A[j] = A[j + 1] + ia;
    B[j] = B[j + 1] + ib;
    Cint[j] = ic + std::exp(ia) * Cint[j + 1];
  }

  const int start = spec.start;
  const auto shape = spec.shape;
  const double k0 = spec.k0, k1 = spec.k1;
  auto eval = [=, A = A, B = B, Cint = Cint](int i, double x, bool want_z) {
    const int j = i - start;
    const double tau = g.T - g.t(i);
    const double disc = std::exp(A[j]);
    if (shape == LinearBsdeSpec::Terminal::affine) {
      if (want_z) return disc * k1;
      return disc * (k0 + k1 * (x + B[j])) + Cint[j];
    }
    const double ex = k0 * std::exp(k1 * (x + B[j]) + 0.5 * k1 * k1 * tau);
    if (want_z) return disc * k1 * ex;
    return disc * ex + Cint[j];
  };
  BsdeSolution::ClosedForm cf;
  cf.y = [eval](int i, double x) { return eval(i, x, false); };
  cf.z = [eval](int i, double x) { return eval(i, x, true); };
  return BsdeSolution(g, spec.start, std::move(cf), BsdeDiagnostics{});
}

double envelope_clamp(double f, double C, double y, double z, double mark_term) {
  const double env = C * (1.0 + std::abs(y) + z * z + mark_term);
  return std::clamp(f, -env, env);
}

BrownianBsdeSpec truncate_quadratic(const BrownianBsdeSpec& spec, double C) {
  if (!(C > 0.0)) throw ValidationError("growth_constant", "must be positive");
  BrownianBsdeSpec out = spec;
  out.terminal_bound = std::min(spec.terminal_bound, C);
  if (spec.driver) {
    auto f = spec.driver;
    out.driver = [f, C](int i, double x, double y, double z) {
      return envelope_clamp(f(i, x, y, z), C, y, z);
    };
  }
  return out;
}

}  // namespace cbsde
