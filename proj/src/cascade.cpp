#include "cascade_bsde/cascade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "cascade_bsde/csv.hpp"
#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/parallel.hpp"

namespace cbsde {

History History::extended(int th, int e) const {
  History h = *this;
  h.theta.push_back(th);
  h.marks.push_back(e);
  return h;
}

std::vector<double> History::times(const TimeGrid& grid) const {
  std::vector<double> out;
  out.reserve(theta.size());
  for (int i : theta) out.push_back(grid.t(i));
  return out;
}

std::uint64_t CascadeSolution::key(const History& h) const {
  const std::uint64_t radix = static_cast<std::uint64_t>(grid_.M + 1) * marks().size();
  const int k = h.size();
  const int first = compressed_ && k > 0 ? k - 1 : 0;
  std::uint64_t key = 0;
  for (int j = first; j < k; ++j)
    key = key * radix + static_cast<std::uint64_t>(h.theta[j]) * marks().size() +
          static_cast<std::uint64_t>(h.marks[j]);
  return key;
}

std::size_t CascadeSolution::index(const History& h) const {
  const int k = h.size();
  if (k > n_) throw std::out_of_range("history longer than the number of jumps");
  const auto it = index_[k].find(key(h));
  if (it == index_[k].end()) throw std::out_of_range("history not on the cascade grid");
  return it->second;
}

const BsdeSolution& CascadeSolution::solution(const History& h) const {
  return sol_[h.size()][index(h)];
}

const IntensityRow& CascadeSolution::intensity(const History& h) const {
  return lambda_[h.size()][index(h)];
}

double CascadeSolution::sup_abs_y() const {
  double s = 0.0;
  for (const auto& level : sol_)
    for (const auto& sol : level) s = std::max(s, sol.diagnostics().sup_y);
  return s;
}

double CascadeSolution::terminal(const History& h, double x) const {
  return std::clamp(terminal_.xi(h, x), -terminal_bound_, terminal_bound_);
}

void CascadeSolution::sectioned_u(const History& h, int i, double x, double y, std::span<double> out) const {
  const int k = h.size();
  for (std::size_t e = 0; e < out.size(); ++e)
    out[e] = k < n_ ? solution(h.extended(i, static_cast<int>(e))).y(i, x) - y : 0.0;
}

double CascadeSolution::driver(const History& h, int i, double x, double y, double z,
                               std::span<const double> u) const {
  if (!driver_.f) return 0.0;
  const int k = h.size();
  const IntensityRow& row = intensity(h);
  DriverArgs args;
  args.k = k;
  args.i = i;
  args.t = grid_.t(i);
  args.x = x;
  args.y = y;
  args.z = z;
  args.u = u;
  args.lambda = row.row(i);
  args.history = &h;
  args.marks = &marks();
  double f = driver_.f(args);
  if (truncation_ > 0.0) {
    double mark_term = 0.0;
    for (std::size_t e = 0; e < u.size(); ++e) mark_term += marks().weights[e] * std::abs(u[e]) * args.lambda[e];
    f = envelope_clamp(f, truncation_, y, z, mark_term);
  }
  return f;
}

namespace {

void enumerate(int k, int M, int E, bool compressed, std::vector<History>& out) {
  if (k == 0) {
    out.push_back({});
    return;
  }
  if (compressed) {
    for (int th = 0; th <= M; ++th)
      for (int e = 0; e < E; ++e) out.push_back({std::vector<int>(k, th), std::vector<int>(k, e)});
    return;
  }
  History h;
  std::function<void(int)> rec = [&](int lo) {
    if (h.size() == k) {
      out.push_back(h);
      return;
    }
    for (int th = lo; th <= M; ++th)
      for (int e = 0; e < E; ++e) {
        h.theta.push_back(th);
        h.marks.push_back(e);
        rec(th);
        h.theta.pop_back();
        h.marks.pop_back();
      }
  };
  rec(0);
}

}  // namespace

CascadeSolution solve_cascade(const DecomposedTerminal& terminal, const DecomposedDriver& driver,
                              DensityModelPtr model, const TimeGrid& grid, const CascadeOptions& opts,
                              std::shared_ptr<const LsmcContext> ctx) {
  if (!model) throw ValidationError("model", "density model is required");
  if (!terminal.xi) throw ValidationError("terminal", "terminal map is required");
  const int n = model->n();
  if (n > kMaxJumps) throw ValidationError("n_jumps", "at most " + std::to_string(kMaxJumps) + " jumps");
  const std::size_t E = model->marks().size();
  if (E > kMaxMarks) throw ValidationError("marks", "at most 64 marks");
  if (grid.M >= 1024) throw ValidationError("M", "must be < 1024");
  if (opts.backend == Backend::lsmc && !ctx) throw ValidationError("backend", "lsmc needs a regression context");
  if (opts.backend == Backend::closed_form) throw ValidationError("backend", "cascade needs tree or lsmc");

  CascadeSolution sol;
  sol.n_ = n;
  sol.grid_ = grid;
  sol.model_ = model;
  sol.backend_ = opts.backend;
  sol.compressed_ = opts.compress_last_jump;
  sol.cap_ = opts.cap;
  sol.truncation_ = opts.truncation;
  sol.terminal_bound_ = opts.truncation > 0.0 ? opts.truncation : kInf;
  sol.terminal_ = terminal;
  sol.driver_ = driver;
  sol.hist_.resize(n + 1);
  sol.index_.resize(n + 1);
  sol.sol_.resize(n + 1);
  sol.lambda_.resize(n + 1);
  for (int k = 0; k <= n; ++k) {
    enumerate(k, grid.M, static_cast<int>(E), sol.compressed_, sol.hist_[k]);
    for (std::size_t idx = 0; idx < sol.hist_[k].size(); ++idx)
      sol.index_[k].emplace(sol.key(sol.hist_[k][idx]), idx);
    sol.sol_[k].resize(sol.hist_[k].size());
    sol.lambda_[k].resize(sol.hist_[k].size());
  }

  const int M = grid.M;
  for (int k = n; k >= 0; --k) {
    auto solve_one = [&](std::size_t idx) {
      const History& h = sol.hist_[k][idx];
      const int j = h.last_theta();
      IntensityRow& row = sol.lambda_[k][idx];
      if (k < n) {
        row = intensity_row(*model, grid, h.times(grid), h.marks);
      } else {
        row.start = j;
        row.n_marks = E;
        row.values.assign(static_cast<std::size_t>(M + 1 - j) * E, 0.0);
      }
      std::vector<const BsdeSolution*> next;
      if (k < n) {
        next.resize(static_cast<std::size_t>(M + 1 - j) * E);
        for (int i = j; i <= M; ++i)
          for (std::size_t e = 0; e < E; ++e)
            next[(i - j) * E + e] = &sol.sol_[k + 1][sol.index(h.extended(i, static_cast<int>(e)))];
      }

      BrownianBsdeSpec spec;
      spec.grid = grid;
      spec.start = j;
      spec.terminal = [&sol, &h](double x) { return sol.terminal(h, x); };
      spec.driver_class = driver.driver_class;
      spec.lipschitz_y = driver.lipschitz_y;
      spec.lipschitz_z = driver.lipschitz_z;
      spec.z_clip = driver.z_clip;
      spec.cap = opts.cap;
      spec.terminal_bound = sol.terminal_bound_;
      if (driver.f) {
        spec.driver = [&sol, &h, &row, next = std::move(next), j, E, k, n](int i, double x, double y,
                                                                           double z) {
          std::array<double, kMaxMarks> u{};
          if (k < n)
            for (std::size_t e = 0; e < E; ++e) u[e] = next[(i - j) * E + e]->y(i, x) - y;
          (void)row;
          return sol.driver(h, i, x, y, z, std::span<const double>(u.data(), E));
        };
      }
      sol.sol_[k][idx] = opts.backend == Backend::tree ? solve_tree(spec, opts.solver)
                                                       : solve_lsmc(spec, ctx, opts.solver);
    };
    const std::size_t count = sol.hist_[k].size();
    if (opts.backend == Backend::tree) {
      parallel_chunks(count, 1, opts.threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t idx = b; idx < e; ++idx) solve_one(idx);
      });
    } else {
      for (std::size_t idx = 0; idx < count; ++idx) solve_one(idx);
    }
  }
  return sol;
}

GluedPath glue(const CascadeSolution& c, const MarkedJumpSample& jumps, std::span<const double> W) {
  const TimeGrid& g = c.grid();
  const int M = g.M;
  const int n = c.n();
  const std::size_t E = c.marks().size();
  GluedPath out;
  out.n_marks = E;
  out.histories.push_back({});
  for (int k = 0; k < n && k < static_cast<int>(jumps.times.size()); ++k) {
    const int s = g.snap(jumps.times[k]);
    if (s > M) break;
    out.jump_nodes.push_back(s);
    out.jump_marks.push_back(jumps.marks[k]);
    out.histories.push_back(out.histories.back().extended(s, jumps.marks[k]));
  }
  const int realized = static_cast<int>(out.jump_nodes.size());
  out.Y.resize(M + 1);
  out.Y_left.resize(M + 1);
  out.Z.resize(M + 1);
  out.Z_step.resize(M);
  out.U.assign(static_cast<std::size_t>(M + 1) * E, 0.0);
  out.U_step.assign(static_cast<std::size_t>(M) * E, 0.0);
  out.regime.resize(M + 1);
  int kY = 0, kL = 0;
  for (int i = 0; i <= M; ++i) {
    while (kY < realized && out.jump_nodes[kY] <= i) ++kY;
    while (kL < realized && out.jump_nodes[kL] < i) ++kL;
    out.regime[i] = kY;
    const double x = W[i];
    const BsdeSolution& sy = c.solution(out.histories[kY]);
    const BsdeSolution& sl = c.solution(out.histories[kL]);
    out.Y[i] = sy.y(i, x);
    out.Y_left[i] = sl.y(i, x);
    out.Z[i] = sl.z(i, x);
    if (i < M) out.Z_step[i] = sy.z(i, x);
    if (kL < n)
      for (std::size_t e = 0; e < E; ++e)
        out.U[i * E + e] = c.solution(out.histories[kL].extended(i, static_cast<int>(e))).y(i, x) - out.Y_left[i];
    if (i < M && kY < n)
      for (std::size_t e = 0; e < E; ++e)
        out.U_step[i * E + e] = c.solution(out.histories[kY].extended(i, static_cast<int>(e))).y(i, x) - out.Y[i];
  }
  return out;
}

double jump_identity_residual(const GluedPath& p) {
  double worst = 0.0;
  const int realized = static_cast<int>(p.jump_nodes.size());
  for (int j = 0; j < realized; ++j) {
    const int i = p.jump_nodes[j];
    if (j > 0 && p.jump_nodes[j - 1] == i) continue;
    const bool single = j + 1 >= realized || p.jump_nodes[j + 1] != i;
    if (!single) continue;  // simultaneous jumps chain through histories not kept on the path
    const double gap = p.Y[i] - p.Y_left[i];
    worst = std::max(worst, std::abs(gap - p.u(i, static_cast<std::size_t>(p.jump_marks[j]))));
  }
  return worst;
}

ResidualStats verify_bsde_residual(const CascadeSolution& c, const BrownianBatch& batch,
                                   const JumpSampler& sampler, std::uint64_t jump_seed, int threads) {
  const TimeGrid& g = c.grid();
  const int M = g.M;
  const double dt = g.dt();
  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = chunk_count(batch.paths, kChunk);
  std::vector<std::array<double, 4>> partial(chunks, {0.0, 0.0, 0.0, 0.0});
  parallel_chunks(batch.paths, kChunk, threads, [&](std::size_t ch, std::size_t b, std::size_t e) {
    auto& acc = partial[ch];
    for (std::size_t p = b; p < e; ++p) {
      const auto W = batch.path(p);
      const auto jumps = sampler.sample(PathStream(jump_seed, Stream::jumps, p));
      const GluedPath gp = glue(c, jumps, W);
      double R = c.terminal(gp.histories[gp.regime[M]], W[M]) - gp.Y[0];
      for (int i = 0; i < M; ++i) {
        const History& h = gp.histories[gp.regime[i]];
        R += c.driver(h, i, W[i], gp.Y[i], gp.Z_step[i], gp.u_step(i)) * dt;
        R -= gp.Z_step[i] * (W[i + 1] - W[i]);
      }
      for (std::size_t j = 0; j < gp.jump_nodes.size(); ++j) {
        const int i = gp.jump_nodes[j];
        if (j > 0 && gp.jump_nodes[j - 1] == i) continue;
        R -= gp.Y[i] - gp.Y_left[i];
      }
      acc[0] = std::max(acc[0], std::abs(R));
      acc[1] += std::abs(R);
      acc[2] += R;
      acc[3] += R * R;
    }
  });
  ResidualStats s;
  s.paths = batch.paths;
  double sum_abs = 0, sum = 0, sum2 = 0;
  for (const auto& a : partial) {
    s.max_abs = std::max(s.max_abs, a[0]);
    sum_abs += a[1];
    sum += a[2];
    sum2 += a[3];
  }
  const double N = static_cast<double>(batch.paths);
  s.mean_abs = sum_abs / N;
  s.mean = sum / N;
  s.std_err = N > 1 ? std::sqrt(std::max(0.0, sum2 / N - s.mean * s.mean) / (N - 1)) : 0.0;
  return s;
}

namespace {

// States used for node-wise checks: the lattice for trees, sampled paths for regression.
std::vector<double> check_states(const BsdeSolution& s, int i, const LsmcContext* ctx, std::size_t limit) {
  std::vector<double> xs;
  if (s.backend() == Backend::tree) {
    const double sd = std::sqrt(s.grid().dt());
    for (int m = 0; m <= i; ++m) xs.push_back((2 * m - i) * sd);
  } else if (ctx) {
    const std::size_t P = std::min(limit, ctx->paths());
    for (std::size_t p = 0; p < P; ++p) xs.push_back(ctx->W(p, i));
  }
  return xs;
}

}  // namespace

ComparisonVerdict comparison_harness(const ComparisonData& lower, const ComparisonData& upper,
                                     DensityModelPtr model, const TimeGrid& grid,
                                     const CascadeOptions& opts, std::shared_ptr<const LsmcContext> ctx,
                                     const BrownianBatch& scenarios, std::uint64_t jump_seed) {
  const CascadeSolution A = solve_cascade(lower.terminal, lower.driver, model, grid, opts, ctx);
  const CascadeSolution B = solve_cascade(upper.terminal, upper.driver, model, grid, opts, ctx);
  const int M = grid.M;
  const std::size_t E = model->marks().size();
  const bool tree = opts.backend == Backend::tree;
  ComparisonVerdict v;
  v.terminal_ordered = true;
  v.driver_ordered = true;
  auto note = [&](const std::string& what) {
    if (v.first_violation.empty()) v.first_violation = what;
  };
  auto where = [](const History& h, int i, double x) {
    return "k=" + std::to_string(h.size()) + " theta=[" + join(h.theta, ';') + "] marks=[" +
           join(h.marks, ';') + "] node=" + std::to_string(i) + " x=" + fmt(x);
  };

  std::vector<double> uA(E), uB(E);
  for (int k = 0; k <= A.n(); ++k) {
    for (std::size_t idx = 0; idx < A.histories(k).size(); ++idx) {
      const History& h = A.histories(k)[idx];
      const BsdeSolution& sa = A.solution(k, idx);
      const BsdeSolution& sb = B.solution(h);
      for (double x : check_states(sa, M, ctx.get(), 2000)) {
        if (B.terminal(h, x) < A.terminal(h, x)) {
          v.terminal_ordered = false;
          note("terminal order violated at " + where(h, M, x));
        }
      }
      for (int i = sa.start(); i < M; ++i) {
        for (double x : check_states(sa, i, ctx.get(), 200)) {
          const double y = sa.y(i, x), z = sa.z(i, x);
          A.sectioned_u(h, i, x, y, uA);
          B.sectioned_u(h, i, x, y, uB);
          const double fa = A.driver(h, i, x, y, z, uA);
          const double fb = B.driver(h, i, x, y, z, uB);
          if (fb < fa - 1e-12 * (1.0 + std::abs(fa))) {
            v.driver_ordered = false;
            note("driver order violated at " + where(h, i, x));
          }
        }
      }
      if (tree) {
        for (int i = sa.start(); i <= M; ++i)
          for (int m = 0; m <= i; ++m) {
            const double gap = sb.tree_y(i, m) - sa.tree_y(i, m);
            ++v.nodes_checked;
            v.min_gap = std::min(v.min_gap, gap);
            if (gap < 0.0) note("comparison violated at " + where(h, i, (2 * m - i) * std::sqrt(grid.dt())));
          }
      }
    }
  }

  if (!tree) {
    const double sa = A.solution(History{}).diagnostics().y0_stderr;
    const double sb = B.solution(History{}).diagnostics().y0_stderr;
    v.tolerance = 3.0 * std::hypot(sa, sb);
  }
  const JumpSampler sampler(model);
  for (std::size_t p = 0; p < scenarios.paths; ++p) {
    std::vector<double> W;
    if (tree) {
      W = scenarios.path(p);
    } else {
      W.resize(M + 1);
      for (int i = 0; i <= M; ++i) W[i] = ctx->W(p % ctx->paths(), i);
    }
    const auto jumps = sampler.sample(PathStream(jump_seed, Stream::jumps, p));
    const GluedPath ga = glue(A, jumps, W);
    const GluedPath gb = glue(B, jumps, W);
    for (int i = 0; i <= M; ++i) {
      const double gap = gb.Y[i] - ga.Y[i];
      ++v.nodes_checked;
      v.min_gap = std::min(v.min_gap, gap);
      if (gap < -v.tolerance)
        note("comparison violated on scenario " + std::to_string(p) + " node " + std::to_string(i));
    }
  }
  v.pass = v.terminal_ordered && v.driver_ordered && v.first_violation.empty();
  return v;
}

void write_cascade_csv(const CascadeSolution& c, std::ostream& out, int stride) {
  if (stride < 1) throw ValidationError("results_stride", "must be at least 1");
  CsvWriter w(out, {"k", "theta_indices", "mark_indices", "time_index", "state_index", "Y", "Z"});
  const int M = c.grid().M;
  for (int k = 0; k <= c.n(); ++k) {
    for (std::size_t idx = 0; idx < c.histories(k).size(); ++idx) {
      const History& h = c.histories(k)[idx];
      const BsdeSolution& s = c.solution(k, idx);
      const std::string th = join(h.theta, ';');
      const std::string mk = join(h.marks, ';');
      for (int i = s.start(); i <= M; ++i) {
        if (i % stride != 0 && i != M) continue;
        if (s.backend() == Backend::tree) {
          for (int m = 0; m <= i; ++m)
            if (m % stride == 0 || m == i)
              w.row({std::to_string(k), th, mk, std::to_string(i), std::to_string(m), fmt(s.tree_y(i, m)),
                    fmt(s.tree_z(i, m))});
        } else {
          for (int j = 0; j <= 20; ++j) {
            const double x = (j - 10) / 10.0 * 3.0 * std::sqrt(c.grid().t(i));
            w.row({std::to_string(k), th, mk, std::to_string(i), std::to_string(j), fmt(s.y(i, x)),
                   fmt(s.z(i, x))});
          }
        }
      }
    }
  }
}

}  // namespace cbsde
