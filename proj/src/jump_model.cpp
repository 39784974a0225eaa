#include "cascade_bsde/jump_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cascade_bsde/errors.hpp"
#include "cascade_bsde/parallel.hpp"

namespace cbsde {

namespace {

bool ordered(std::span<const double> theta) {
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (!(theta[j] >= 0.0)) return false;
    if (j > 0 && theta[j] < theta[j - 1]) return false;
  }
  return true;
}

// theta and marks extended by one entry, reusing caller-owned buffers.
struct Extended {
  std::vector<double> theta;
  std::vector<int> marks;
  Extended(std::span<const double> th, std::span<const int> mk)
      : theta(th.begin(), th.end()), marks(mk.begin(), mk.end()) {
    theta.push_back(0.0);
    marks.push_back(0);
  }
  void set(double t, int e) {
    theta.back() = t;
    marks.back() = e;
  }
};

// sum_e w_e head(k+1, theta (+) s, marks (+) e)
double next_mass(const DensityModel& model, int k, Extended& ext, double s) {
  const auto& mg = model.marks();
  double acc = 0.0;
  for (std::size_t e = 0; e < mg.size(); ++e) {
    ext.set(s, static_cast<int>(e));
    acc += mg.weights[e] * model.head(k + 1, ext.theta, ext.marks);
  }
  return acc;
}

class ProductExponentialModel final : public DensityModel {
 public:
  ProductExponentialModel(std::string name, int n, double lambda0, MarkGrid marks, double horizon,
                          double quad_step)
      : DensityModel(n, marks, horizon, quad_step, lambda0),
        name_(std::move(name)),
        lambda0_(lambda0),
        q_(1.0 / marks.total_weight()) {
    if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) throw ValidationError("lambda0", "must be positive");
  }

  std::string name() const override { return name_; }

  double density(std::span<const double> theta, std::span<const int> marks) const override {
    return head(n(), theta, marks);
  }

  double head(int k, std::span<const double> theta, std::span<const int>) const override {
    if (k == 0) return 1.0;
    if (!ordered(theta.first(k))) return 0.0;
    return std::pow(lambda0_ * q_, k) * std::exp(-lambda0_ * theta[k - 1]);
  }

 private:
  std::string name_;
  double lambda0_;
  double q_;
};

class TabulatedModel final : public DensityModel {
 public:
  TabulatedModel(int n, std::vector<double> nodes, MarkGrid marks, std::vector<double> values,
                 double quad_step)
      : DensityModel(n, marks, nodes.empty() ? 0.0 : nodes.back(), quad_step, kInf),
        nodes_(std::move(nodes)) {
    if (nodes_.size() < 2) throw ValidationError("model_file", "need at least two theta nodes");
    if (nodes_.front() < 0.0) throw ValidationError("model_file", "theta nodes must be >= 0");
    for (std::size_t j = 1; j < nodes_.size(); ++j)
      if (!(nodes_[j] > nodes_[j - 1])) throw ValidationError("model_file", "theta nodes must increase");
    const std::size_t N = nodes_.size();
    const std::size_t E = this->marks().size();
    std::size_t expected = 1;
    for (int j = 0; j < n; ++j) expected *= N * E;
    if (values.size() != expected) throw ValidationError("model_file", "table is not a full grid");
    for (double v : values)
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("model_file", "density must be >= 0");

    heads_.resize(n + 1);
    heads_[n] = std::move(values);
    zero_unordered(n);
    for (int k = n - 1; k >= 1; --k) integrate_last(k);
    heads_[0] = {1.0};
  }

  std::string name() const override { return "tabulated"; }

  double density(std::span<const double> theta, std::span<const int> marks) const override {
    return head(n(), theta, marks);
  }

  double head(int k, std::span<const double> theta, std::span<const int> marks) const override {
    if (k == 0) return 1.0;
    if (!ordered(theta.first(k))) return 0.0;
    const std::size_t N = nodes_.size();
    const std::size_t E = this->marks().size();
    std::vector<std::size_t> cell(k);
    std::vector<double> frac(k);
    for (int j = 0; j < k; ++j) {
      const double x = theta[j];
      if (x < nodes_.front() || x > nodes_.back()) return 0.0;
      auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
      std::size_t c = static_cast<std::size_t>(it - nodes_.begin());
      c = std::clamp<std::size_t>(c, 1, N - 1) - 1;
      cell[j] = c;
      frac[j] = (x - nodes_[c]) / (nodes_[c + 1] - nodes_[c]);
    }
    std::size_t mark_offset = 0;
    for (int j = 0; j < k; ++j) mark_offset = mark_offset * E + static_cast<std::size_t>(marks[j]);
    std::size_t mark_block = 1;
    for (int j = 0; j < k; ++j) mark_block *= E;

    double acc = 0.0;
    for (unsigned corner = 0; corner < (1u << k); ++corner) {
      double w = 1.0;
      std::size_t idx = 0;
      for (int j = 0; j < k; ++j) {
        const bool up = (corner >> j) & 1u;
        w *= up ? frac[j] : 1.0 - frac[j];
        idx = idx * N + cell[j] + (up ? 1 : 0);
      }
      if (w == 0.0) continue;
      acc += w * heads_[k][idx * mark_block + mark_offset];
    }
    return acc;
  }

 private:
  void zero_unordered(int k) {
    const std::size_t N = nodes_.size();
    const std::size_t E = marks().size();
    std::size_t mark_block = 1;
    for (int j = 0; j < k; ++j) mark_block *= E;
    std::size_t tuples = 1;
    for (int j = 0; j < k; ++j) tuples *= N;
    for (std::size_t t = 0; t < tuples; ++t) {
      std::size_t rem = t;
      std::size_t prev = N;
      bool ok = true;
      for (int j = k - 1; j >= 0; --j) {
        const std::size_t i = rem % N;
        rem /= N;
        if (i > prev) ok = false;
        prev = i;
      }
      if (!ok)
        std::fill_n(heads_[k].begin() + static_cast<std::ptrdiff_t>(t * mark_block), mark_block, 0.0);
    }
  }

  // heads_[k] from heads_[k+1] by trapezoid over the last theta on nodes >= theta_k.
  void integrate_last(int k) {
    const std::size_t N = nodes_.size();
    const std::size_t E = marks().size();
    const auto& w = marks().weights;
    std::size_t mark_block = 1;
    for (int j = 0; j < k; ++j) mark_block *= E;
    std::size_t tuples = 1;
    for (int j = 0; j < k; ++j) tuples *= N;
    heads_[k].assign(tuples * mark_block, 0.0);
    for (std::size_t t = 0; t < tuples; ++t) {
      const std::size_t last = t % N;
      for (std::size_t m = 0; m < mark_block; ++m) {
        double acc = 0.0;
        for (std::size_t j = last; j + 1 < N; ++j) {
          const double h = nodes_[j + 1] - nodes_[j];
          for (std::size_t e = 0; e < E; ++e) {
            const double a = heads_[k + 1][((t * N + j) * mark_block + m) * E + e];
            const double b = heads_[k + 1][((t * N + j + 1) * mark_block + m) * E + e];
            acc += w[e] * 0.5 * h * (a + b);
          }
        }
        heads_[k][t * mark_block + m] = acc;
      }
    }
  }

  std::vector<double> nodes_;
  std::vector<std::vector<double>> heads_;
};

double trapezoid(const std::function<double(double)>& g, double a, double b, double h) {
  if (!(b > a)) return 0.0;
  const int m = std::max(1, static_cast<int>(std::ceil((b - a) / h - 1e-9)));
  const double step = (b - a) / m;
  double acc = 0.5 * (g(a) + g(b));
  for (int j = 1; j < m; ++j) acc += g(a + j * step);
  return acc * step;
}

void check_history(const DensityModel& model, int k, std::span<const double> theta,
                   std::span<const int> marks) {
  if (k < 0 || k > model.n()) throw ValidationError("k", "must lie in 0..n");
  if (theta.size() != static_cast<std::size_t>(k) || marks.size() != static_cast<std::size_t>(k))
    throw ValidationError("theta", "history length must equal k");
  if (!ordered(theta)) throw ValidationError("theta", "jump times must be ordered and >= 0");
  for (int e : marks)
    if (e < 0 || static_cast<std::size_t>(e) >= model.marks().size())
      throw ValidationError("marks", "mark index out of range");
}

}  // namespace

int MarkedJumpSample::count_until(double t) const {
  int c = 0;
  for (double tau : times)
    if (tau <= t) ++c;
  return c;
}

DensityModel::DensityModel(int n, MarkGrid marks, double horizon, double quad_step,
                           double intensity_bound)
    : n_(n), marks_(std::move(marks)), horizon_(horizon), quad_step_(quad_step),
      intensity_bound_(intensity_bound) {
  if (n < 1) throw ValidationError("n_jumps", "must be >= 1");
  if (!(horizon > 0.0)) throw ValidationError("support_horizon", "must be positive");
  if (!(quad_step > 0.0)) throw ValidationError("quad_step", "must be positive");
  marks_.validate();
}

DensityModelPtr make_exponential_model(double lambda0, MarkGrid marks, double horizon,
                                       double quad_step) {
  return std::make_shared<ProductExponentialModel>("exponential", 1, lambda0, std::move(marks),
                                                   horizon, quad_step);
}

DensityModelPtr make_product_exponential_model(int n, double lambda0, MarkGrid marks,
                                               double horizon, double quad_step) {
  return std::make_shared<ProductExponentialModel>("product_exponential", n, lambda0,
                                                   std::move(marks), horizon, quad_step);
}

DensityModelPtr make_tabulated_model(int n, std::vector<double> theta_nodes, MarkGrid marks,
                                     std::vector<double> values, double quad_step) {
  return std::make_shared<TabulatedModel>(n, std::move(theta_nodes), std::move(marks),
                                          std::move(values), quad_step);
}

DensityModelPtr load_tabulated_model(const std::string& csv_path, std::vector<double> mark_weights,
                                     double quad_step) {
  std::ifstream in(csv_path);
  if (!in) throw ValidationError("model_file", "cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("model_file", "empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const int cols = static_cast<int>(header.size());
  if (cols < 3 || cols % 2 == 0 || header.back() != "density")
    throw ValidationError("model_file", "header must be theta_1..theta_n,e_1..e_n,density");
  const int n = (cols - 1) / 2;
  for (int j = 0; j < n; ++j) {
    if (header[j] != "theta_" + std::to_string(j + 1) || header[n + j] != "e_" + std::to_string(j + 1))
      throw ValidationError("model_file", "header must be theta_1..theta_n,e_1..e_n,density");
  }

  std::vector<std::vector<double>> rows;
  std::map<double, int> theta_set;
  std::map<double, int> mark_set;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != cols) throw ValidationError("model_file", "ragged row");
    for (int j = 0; j < n; ++j) {
      theta_set[row[j]] = 0;
      mark_set[row[n + j]] = 0;
    }
    rows.push_back(std::move(row));
  }
  std::vector<double> nodes, points;
  for (auto& [v, idx] : theta_set) {
    idx = static_cast<int>(nodes.size());
    nodes.push_back(v);
  }
  for (auto& [v, idx] : mark_set) {
    idx = static_cast<int>(points.size());
    points.push_back(v);
  }
  if (mark_weights.empty()) mark_weights.assign(points.size(), 1.0);
  MarkGrid marks(points, mark_weights);

  const std::size_t N = nodes.size(), E = points.size();
  std::size_t total = 1;
  for (int j = 0; j < n; ++j) total *= N * E;
  if (rows.size() != total) throw ValidationError("model_file", "table is not a full grid");
  std::vector<double> values(total, 0.0);
  for (const auto& row : rows) {
    std::size_t ti = 0, mi = 0;
    for (int j = 0; j < n; ++j) {
      ti = ti * N + static_cast<std::size_t>(theta_set[row[j]]);
      mi = mi * E + static_cast<std::size_t>(mark_set[row[n + j]]);
    }
    std::size_t mark_block = 1;
    for (int j = 0; j < n; ++j) mark_block *= E;
    values[ti * mark_block + mi] = row.back();
  }
  return make_tabulated_model(n, std::move(nodes), std::move(marks), std::move(values), quad_step);
}

double marginal_gamma(const DensityModel& model, int k, double t, std::span<const double> theta,
                      std::span<const int> marks) {
  check_history(model, k, theta, marks);
  if (!(t >= 0.0)) throw ValidationError("t", "must be >= 0");
  if (k == model.n()) return model.density(theta, marks);
  const double lower = k == 0 ? 0.0 : theta[k - 1];
  const double G = model.head(k, theta, marks);
  const double upper = std::min(t, model.support_horizon());
  if (upper <= lower) return G;
  Extended ext(theta, marks);
  const double used =
      trapezoid([&](double s) { return next_mass(model, k, ext, s); }, lower, upper, model.quad_step());
  return std::max(0.0, G - used);
}

IntensityValue intensity(const DensityModel& model, int k, double t, int mark,
                         std::span<const double> theta, std::span<const int> marks) {
  if (k < 1 || k > model.n()) throw ValidationError("k", "must lie in 1..n");
  check_history(model, k - 1, theta, marks);
  if (mark < 0 || static_cast<std::size_t>(mark) >= model.marks().size())
    throw ValidationError("mark", "mark index out of range");
  const double lower = k == 1 ? 0.0 : theta[k - 2];
  if (t < lower) throw ValidationError("t", "must be >= theta_{k-1}");
  if (t > model.support_horizon()) return {0.0, false};
  const double den = marginal_gamma(model, k - 1, t, theta, marks);
  if (den < kGammaFloor) return {0.0, true};
  Extended ext(theta, marks);
  ext.set(t, mark);
  return {model.head(k, ext.theta, ext.marks) / den, false};
}

double total_intensity(const DensityModel& model, const MarkedJumpSample& sample, double t, int mark) {
  double prev = 0.0;
  for (int k = 1; k <= model.n(); ++k) {
    const double tau = sample.times[k - 1];
    if (prev < t && t <= tau) {
      return intensity(model, k, t, mark, std::span(sample.times).first(k - 1),
                       std::span(sample.marks).first(k - 1))
          .value;
    }
    prev = tau;
    if (!std::isfinite(tau)) break;
  }
  return 0.0;
}

IntensityRow intensity_row(const DensityModel& model, const TimeGrid& grid,
                           std::span<const double> theta, std::span<const int> marks) {
  const int k = static_cast<int>(theta.size());
  check_history(model, k, theta, marks);
  IntensityRow row;
  row.n_marks = model.marks().size();
  row.start = k == 0 ? 0 : grid.snap(theta[k - 1]);
  if (row.start > grid.M) row.start = grid.M;
  const std::size_t E = row.n_marks;
  row.values.assign(static_cast<std::size_t>(grid.M + 1 - row.start) * E, 0.0);
  if (k == model.n()) return row;

  const auto& w = model.marks().weights;
  const double H = model.support_horizon();
  Extended ext(theta, marks);
  std::vector<double> num(E);
  auto numerators = [&](double s) {
    double mass = 0.0;
    for (std::size_t e = 0; e < E; ++e) {
      ext.set(s, static_cast<int>(e));
      num[e] = s > H ? 0.0 : model.head(k + 1, ext.theta, ext.marks);
      mass += w[e] * num[e];
    }
    return mass;
  };

  double gamma = model.head(k, theta, marks);
  const int sub = std::max(1, static_cast<int>(std::ceil(grid.dt() / model.quad_step() - 1e-9)));
  double s_prev = grid.t(row.start);
  double g_prev = numerators(s_prev);
  for (int i = row.start; i <= grid.M; ++i) {
    if (i > row.start) {
      const double step = (grid.t(i) - s_prev) / sub;
      for (int j = 1; j <= sub; ++j) {
        const double s = j == sub ? grid.t(i) : s_prev + j * step;
        const double g = numerators(s);
        gamma -= 0.5 * step * (g_prev + g);
        g_prev = g;
      }
      s_prev = grid.t(i);
    } else {
      numerators(s_prev);
    }
    if (gamma < kGammaFloor) {
      ++row.floored;
      continue;
    }
    for (std::size_t e = 0; e < E; ++e) row.values[(i - row.start) * E + e] = num[e] / gamma;
  }
  return row;
}

JumpSampler::JumpSampler(DensityModelPtr model) : model_(std::move(model)) {
  const DensityModel& m = *model_;
  const double h = m.quad_step();
  const int J = static_cast<int>(std::ceil(m.support_horizon() / h - 1e-9));
  first_cdf_.assign(J + 1, 0.0);
  Extended ext({}, {});
  double g_prev = next_mass(m, 0, ext, 0.0);
  double used = 0.0;
  for (int j = 1; j <= J; ++j) {
    const double s = std::min(j * h, m.support_horizon());
    const double g = next_mass(m, 0, ext, s);
    used += 0.5 * (s - std::min((j - 1) * h, m.support_horizon())) * (g_prev + g);
    g_prev = g;
    first_cdf_[j] = std::min(used, 1.0);
  }
}

double JumpSampler::draw_time(int k, std::span<const double> theta, std::span<const int> marks,
                              double u) const {
  const DensityModel& m = *model_;
  const double h = m.quad_step();
  const double H = m.support_horizon();
  if (k == 1) {
    if (u >= first_cdf_.back()) return kInf;
    auto it = std::upper_bound(first_cdf_.begin(), first_cdf_.end(), u);
    const std::size_t j = static_cast<std::size_t>(it - first_cdf_.begin());
    const double f0 = first_cdf_[j - 1], f1 = first_cdf_[j];
    const double s0 = (j - 1) * h, s1 = std::min(j * h, H);
    return f1 > f0 ? s0 + (u - f0) / (f1 - f0) * (s1 - s0) : s0;
  }
  const double G = m.head(k - 1, theta, marks);
  if (!(G > kGammaFloor))
    throw std::runtime_error("jump sampling: zero conditional mass at jump " + std::to_string(k));
  Extended ext(theta, marks);
  const double target = u * G;
  double s = theta[k - 2];
  double g_prev = next_mass(m, k - 1, ext, s);
  double used = 0.0;
  while (s < H) {
    const double s1 = std::min(s + h, H);
    const double g = next_mass(m, k - 1, ext, s1);
    const double piece = 0.5 * (s1 - s) * (g_prev + g);
    if (used + piece > target) return s + (target - used) / piece * (s1 - s);
    used += piece;
    g_prev = g;
    s = s1;
  }
  return kInf;
}

int JumpSampler::draw_mark(int k, std::span<const double> theta, std::span<const int> marks,
                           double tau, double u) const {
  const DensityModel& m = *model_;
  const auto& w = m.marks().weights;
  Extended ext(theta, marks);
  std::vector<double> cum(w.size());
  double acc = 0.0;
  for (std::size_t e = 0; e < w.size(); ++e) {
    ext.set(tau, static_cast<int>(e));
    acc += w[e] * m.head(k, ext.theta, ext.marks);
    cum[e] = acc;
  }
  if (!(acc > 0.0)) throw std::runtime_error("jump sampling: zero mark mass");
  const double target = u * acc;
  for (std::size_t e = 0; e < cum.size(); ++e)
    if (target < cum[e]) return static_cast<int>(e);
  return static_cast<int>(cum.size()) - 1;
}

MarkedJumpSample JumpSampler::sample(const PathStream& stream) const {
  const int n = model_->n();
  MarkedJumpSample out;
  out.times.reserve(n);
  out.marks.reserve(n);
  for (int k = 1; k <= n; ++k) {
    const double tau = draw_time(k, out.times, out.marks, stream.uniform(2 * (k - 1)));
    if (!std::isfinite(tau)) break;
    const int e = draw_mark(k, out.times, out.marks, tau, stream.uniform(2 * (k - 1) + 1));
    out.times.push_back(tau);
    out.marks.push_back(e);
  }
  out.times.resize(n, kInf);
  out.marks.resize(n, -1);
  return out;
}

MarkedJumpSample sample_jumps(const JumpSampler& sampler, const PathStream& stream) {
  return sampler.sample(stream);
}

namespace {

double compensator_integral(const DensityModel& m, const MarkedJumpSample& s,
                            const JumpTestFunction& U, double T) {
  const auto& w = m.marks().weights;
  const std::size_t E = w.size();
  const double h = m.quad_step();
  const double end = std::min(T, m.support_horizon());
  double total = 0.0;
  std::vector<double> g(E);
  for (int k = 1; k <= m.n(); ++k) {
    const double a = k == 1 ? 0.0 : s.times[k - 2];
    if (!(a < end)) break;
    const double b = std::min(s.times[k - 1], end);
    const auto hist_t = std::span(s.times).first(k - 1);
    const auto hist_m = std::span(s.marks).first(k - 1);
    Extended ext(hist_t, hist_m);
    double gamma = m.head(k - 1, hist_t, hist_m);
    auto eval = [&](double x) {
      double mass = 0.0;
      for (std::size_t e = 0; e < E; ++e) {
        ext.set(x, static_cast<int>(e));
        g[e] = m.head(k, ext.theta, ext.marks);
        mass += w[e] * g[e];
      }
      return mass;
    };
    auto integrand = [&](double x) {
      if (gamma < kGammaFloor) return 0.0;
      double acc = 0.0;
      for (std::size_t e = 0; e < E; ++e) acc += w[e] * U(x, static_cast<int>(e), s) * g[e] / gamma;
      return acc;
    };
    const int steps = std::max(1, static_cast<int>(std::ceil((b - a) / h - 1e-9)));
    const double step = (b - a) / steps;
    double mass_prev = eval(a);
    double f_prev = integrand(a);
    for (int j = 1; j <= steps; ++j) {
      const double x = j == steps ? b : a + j * step;
      const double mass = eval(x);
      gamma -= 0.5 * step * (mass_prev + mass);
      const double f = integrand(x);
      total += 0.5 * step * (f_prev + f);
      mass_prev = mass;
      f_prev = f;
    }
  }
  return total;
}

}  // namespace

CompensatorResult compensator_check(const JumpSampler& sampler, const JumpTestFunction& U, double T,
                                    std::size_t paths, std::uint64_t seed, int threads) {
  if (paths < 2) throw ValidationError("paths", "need at least two paths");
  if (!(T > 0.0)) throw ValidationError("T", "must be positive");
  const DensityModel& m = sampler.model();
  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = chunk_count(paths, kChunk);
  std::vector<std::array<double, 4>> partial(chunks, {0.0, 0.0, 0.0, 0.0});
  parallel_chunks(paths, kChunk, threads, [&](std::size_t c, std::size_t b, std::size_t e) {
    auto& acc = partial[c];
    for (std::size_t p = b; p < e; ++p) {
      const auto left = sampler.sample(PathStream(seed, Stream::jumps, p));
      double l = 0.0;
      for (int k = 0; k < m.n(); ++k)
        if (left.times[k] <= T) l += U(left.times[k], left.marks[k], left);
      const auto right = sampler.sample(PathStream(seed, Stream::jumps_aux, p));
      const double r = compensator_integral(m, right, U, T);
      acc[0] += l;
      acc[1] += l * l;
      acc[2] += r;
      acc[3] += r * r;
    }
  });
  double sl = 0, sl2 = 0, sr = 0, sr2 = 0;
  for (const auto& a : partial) {
    sl += a[0];
    sl2 += a[1];
    sr += a[2];
    sr2 += a[3];
  }
  const double N = static_cast<double>(paths);
  CompensatorResult res;
  res.lhs = sl / N;
  res.rhs = sr / N;
  res.stderr_lhs = std::sqrt(std::max(0.0, sl2 / N - res.lhs * res.lhs) / (N - 1));
  res.stderr_rhs = std::sqrt(std::max(0.0, sr2 / N - res.rhs * res.rhs) / (N - 1));
  res.std_err = std::hypot(res.stderr_lhs, res.stderr_rhs);
  return res;
}

double quadrature_mass(const DensityModel& model, double horizon, double step) {
  const int n = model.n();
  const auto& w = model.marks().weights;
  std::vector<double> theta;
  std::vector<int> marks;
  std::function<double(double)> level = [&](double lo) -> double {
    const int k = static_cast<int>(theta.size());
    return trapezoid(
        [&](double s) {
          double acc = 0.0;
          for (std::size_t e = 0; e < w.size(); ++e) {
            theta.push_back(s);
            marks.push_back(static_cast<int>(e));
            acc += w[e] * (k + 1 == n ? model.density(theta, marks) : level(s));
            theta.pop_back();
            marks.pop_back();
          }
          return acc;
        },
        lo, horizon, step);
  };
  return level(0.0);
}

}  // namespace cbsde
