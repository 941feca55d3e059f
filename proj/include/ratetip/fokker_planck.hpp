#pragma once

// Crank-Nicolson finite-difference solver for
//   dP/dt = D P_xx - (f(x, t) P)_x
// on a fixed interval with absorbing (Dirichlet) ends.  The advective flux is
// Scharfetter-Gummel (exponentially fitted): centred for small cell Peclet
// numbers, upwind for large ones, and exact for the frozen stationary state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace ratetip {

struct Grid1D {
  double x_start = -6.0;
  double x_end = 2.0;
  int n_cells = 3200;

  double h() const { return (x_end - x_start) / n_cells; }
  double node(int i) const { return x_start + h() * i; }
  int n_nodes() const { return n_cells + 1; }

  void validate() const {
    if (!(x_start < x_end)) throw InvalidArgument("grid: x_start < x_end required");
    if (n_cells < 16) throw InvalidArgument("grid: n_cells >= 16 required");
  }
};

/// Trapezoid rule on the uniform grid.
inline double trapezoid(const Grid1D& g, std::span<const double> v) {
  double s = 0.5 * (v.front() + v.back());
  for (std::size_t i = 1; i + 1 < v.size(); ++i) s += v[i];
  return s * g.h();
}

/// Probability density at one instant.  `values` covers every node; the two
/// boundary entries are held at zero.
struct DensityField {
  Grid1D grid;
  double t = 0.0;
  std::vector<double> values;
  double mass = 0.0;
};

struct EscapeSeries {
  std::vector<double> times;
  std::vector<double> p_esc;
  std::vector<double> rate;
};

/// Moving threshold x~(t) = x_u(t) + y on the deterministic reference.
struct ThresholdCurve {
  Trajectory reference;
  double y = 1.5;

  double at(double t) const { return reference.at(t) + y; }
};

inline ThresholdCurve make_threshold_curve(const ModelParams& params, double y,
                                           double t_final = 10.0) {
  if (!(y > 0.0)) throw InvalidArgument("threshold: y must be positive");
  return {deterministic_trajectory(params.x0, params.t0, t_final, params), y};
}

struct FpeOptions {
  int n_cells = 3200;
  /// Solver substeps per reporting step params.dt.
  int substeps = 20;
};

inline Grid1D make_grid(const ModelParams& p, const FpeOptions& o = {}) {
  Grid1D g{p.x_start, p.x_end, o.n_cells};
  g.validate();
  return g;
}

namespace detail {

/// z / (exp(z) - 1), stable near zero.
inline double bernoulli(double z) {
  if (std::abs(z) < 1e-6) return 1.0 - 0.5 * z + z * z / 12.0;
  return z / std::expm1(z);
}

}  // namespace detail

/// Tridiagonal Crank-Nicolson propagator for one substep, assembled once and
/// applied to any number of fields (density and its moment-weighted copies).
class CrankNicolsonStep {
 public:
  /// Operator frozen at t_mid (midpoint rule).  Nodes with index >= cut are
  /// held at zero (absorbing); the default cut is the right boundary.
  /// theta = 1 gives an implicit Euler step (used to damp the stiff modes
  /// after the absorbing cut jumps).
  CrankNicolsonStep(const Grid1D& g, double t_mid, double dt, const ModelParams& p,
                    std::optional<int> cut = std::nullopt, double theta = 0.5) {
    reset(g, t_mid, dt, p, cut, theta);
  }

  /// Reassembles in place (no allocation when the grid is unchanged).
  void reset(const Grid1D& g, double t_mid, double dt, const ModelParams& p,
             std::optional<int> cut = std::nullopt, double theta = 0.5) {
    n_ = g.n_nodes();
    cut_ = cut.value_or(g.n_cells);
    if (cut_ < 2 || cut_ > g.n_cells) throw ThresholdOutsideDomain("absorbing cut outside grid");
    const double h = g.h();
    const double lam = lambda_at(t_mid, p);
    // face i+1/2: J = A_i P_i - B_i P_{i+1}
    auto& A = face_a_;
    auto& B = face_b_;
    A.resize(n_ - 1);
    B.resize(n_ - 1);
    // w = (1/D) * integral of f over the cell, so the frozen Boltzmann
    // weights exp(-U/D) are an exact discrete equilibrium
    RampParams frozen{1.0, 1.0};
    double u_left = potential_at(g.x_start, lam, frozen).U;
    for (int i = 0; i < n_ - 1; ++i) {
      const double u_right = potential_at(g.x_start + h * (i + 1), lam, frozen).U;
      const double w = (u_left - u_right) / p.D;
      const double b = detail::bernoulli(w);
      A[i] = p.D / h * (b + w);  // B(-w) = B(w) + w
      B[i] = p.D / h * b;
      u_left = u_right;
    }
    lo_.assign(n_, 0.0);
    di_.assign(n_, 0.0);
    up_.assign(n_, 0.0);
    for (int i = 1; i < cut_; ++i) {
      // dP_i/dt = (A_{i-1} P_{i-1} - (B_{i-1} + A_i) P_i + B_i P_{i+1}) / h
      lo_[i] = A[i - 1] / h;
      di_[i] = -(B[i - 1] + A[i]) / h;
      up_[i] = B[i] / h;
    }
    // Thomas factorisation of (I - theta dt L) on nodes 1..cut-1
    half_ = theta * dt;
    explicit_ = (1.0 - theta) * dt;
    c_.assign(n_, 0.0);
    m_.assign(n_, 0.0);
    for (int i = 1; i < cut_; ++i) {
      const double a = i > 1 ? -half_ * lo_[i] : 0.0;
      const double b = 1.0 - half_ * di_[i];
      const double c = i + 1 < cut_ ? -half_ * up_[i] : 0.0;
      const double denom = b - a * (i > 1 ? c_[i - 1] : 0.0);
      if (!(std::abs(denom) > 1e-300) || !std::isfinite(denom))
        throw LinearSolveFailed("Crank-Nicolson: singular tridiagonal system");
      m_[i] = 1.0 / denom;
      c_[i] = c * m_[i];
    }
  }

  /// Advances `v` (full node vector) in place; entries at and beyond the cut
  /// and at node 0 are set to zero.
  void apply(std::vector<double>& v) const {
    rhs_.assign(n_, 0.0);
    for (int i = 1; i < cut_; ++i) {
      double r = v[i] + explicit_ * di_[i] * v[i];
      if (i > 1) r += explicit_ * lo_[i] * v[i - 1];
      if (i + 1 < cut_) r += explicit_ * up_[i] * v[i + 1];
      rhs_[i] = r;
    }
    // forward sweep
    for (int i = 1; i < cut_; ++i) {
      const double a = i > 1 ? -half_ * lo_[i] : 0.0;
      const double prev = i > 1 ? rhs_[i - 1] : 0.0;
      rhs_[i] = (rhs_[i] - a * prev) * m_[i];
    }
    for (int i = cut_ - 2; i >= 1; --i) rhs_[i] -= c_[i] * rhs_[i + 1];
    v[0] = 0.0;
    for (int i = 1; i < cut_; ++i) v[i] = rhs_[i];
    for (int i = cut_; i < n_; ++i) v[i] = 0.0;
  }

 private:
  int n_ = 0;
  int cut_ = 0;
  double half_ = 0.0, explicit_ = 0.0;
  std::vector<double> face_a_, face_b_, lo_, di_, up_, c_, m_;
  mutable std::vector<double> rhs_;
};

/// Roundoff negativity in (-1e-12, 0) is clipped; anything below is a scheme
/// failure.
inline void clip_roundoff(std::vector<double>& v) {
  for (double& x : v) {
    if (x < 0.0) {
      if (x < -1e-12) throw NegativeDensity("density value " + std::to_string(x));
      x = 0.0;
    }
  }
}

/// Quasi-stationary start: exp(-U(x, lam0)/D) on the well basin (up to the
/// barrier top x = 1 - lam0), zero beyond it, normalised to unit mass.
inline DensityField stationary_density(double lam0, double D, const Grid1D& grid, double t = 0.0) {
  grid.validate();
  if (!(D > 0.0)) throw InvalidArgument("stationary_density: D must be positive");
  const double well = -1.0 - lam0;
  if (!(well > grid.x_start && well < grid.x_end))
    throw InvalidArgument("stationary_density: well minimum outside the grid");
  const double barrier = 1.0 - lam0;
  RampParams frozen{1.0, 1.0};
  std::vector<double> U(grid.n_nodes());
  double u_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid.n_nodes(); ++i) {
    U[i] = potential_at(grid.node(i), lam0, frozen).U;
    if (grid.node(i) <= barrier) u_min = std::min(u_min, U[i]);
  }
  DensityField d{grid, t, std::vector<double>(grid.n_nodes(), 0.0), 0.0};
  for (int i = 1; i < grid.n_cells; ++i)
    if (grid.node(i) <= barrier) d.values[i] = std::exp(-(U[i] - u_min) / D);
  const double z = trapezoid(grid, d.values);
  if (!(z >= 1e-300) || !std::isfinite(z))
    throw DegenerateDensity("stationary_density: normalisation integral vanishes");
  for (double& v : d.values) v /= z;
  d.mass = trapezoid(grid, d.values);
  return d;
}

/// Advances the density by one Crank-Nicolson step of size dt_solver.
inline DensityField step(const DensityField& density, double dt_solver, const ModelParams& params) {
  if (!(dt_solver > 0.0)) throw InvalidArgument("step: dt_solver must be positive");
  CrankNicolsonStep cn(density.grid, density.t + 0.5 * dt_solver, dt_solver, params);
  DensityField out = density;
  cn.apply(out.values);
  clip_roundoff(out.values);
  out.t += dt_solver;
  out.mass = trapezoid(out.grid, out.values);
  return out;
}

struct Evolution {
  std::vector<DensityField> densities;  // includes the initial density
  EscapeSeries escape;
};

namespace detail {

inline EscapeSeries escape_from_masses(const std::vector<double>& times,
                                       const std::vector<double>& masses, double dt) {
  EscapeSeries e;
  for (std::size_t n = 1; n < masses.size(); ++n) {
    const double p = masses[n - 1] > 0.0 ? std::clamp(1.0 - masses[n] / masses[n - 1], 0.0, 1.0)
                                          : 0.0;
    e.times.push_back(times[n]);
    e.p_esc.push_back(p);
    e.rate.push_back(p / dt);
  }
  return e;
}

inline int steps_between(double a, double b, double dt) {
  return static_cast<int>(std::llround((b - a) / dt));
}

}  // namespace detail

/// Repeated Crank-Nicolson steps from initial.t to t_final with densities
/// recorded every record_dt and the per-record escape probability
/// p_esc(t_n) = 1 - mass(t_n) / mass(t_{n-1}).
inline Evolution evolve(const DensityField& initial, double t_final, const ModelParams& params,
                        double record_dt, const FpeOptions& opt = {}) {
  if (!(initial.t < t_final)) throw InvalidArgument("evolve: initial.t < t_final required");
  if (!(record_dt > 0.0)) throw InvalidArgument("evolve: record_dt must be positive");
  const int n_rec = detail::steps_between(initial.t, t_final, record_dt);
  const int sub = std::max(1, opt.substeps);
  const double dts = record_dt / sub;
  Evolution ev;
  ev.densities.reserve(static_cast<std::size_t>(n_rec) + 1);
  ev.densities.push_back(initial);
  std::vector<double> times{initial.t}, masses{initial.mass};
  DensityField cur = initial;
  CrankNicolsonStep cn(cur.grid, initial.t + 0.5 * dts, dts, params);
  for (int n = 1; n <= n_rec; ++n) {
    const double t_start = initial.t + (n - 1) * record_dt;
    for (int k = 0; k < sub; ++k) {
      cn.reset(cur.grid, t_start + (k + 0.5) * dts, dts, params);
      cn.apply(cur.values);
      clip_roundoff(cur.values);
    }
    cur.t = initial.t + n * record_dt;
    cur.mass = trapezoid(cur.grid, cur.values);
    times.push_back(cur.t);
    masses.push_back(cur.mass);
    ev.densities.push_back(cur);
  }
  ev.escape = detail::escape_from_masses(times, masses, record_dt);
  return ev;
}

/// Density of the headline setup: quasi-stationary at lambda(t0), evolved to
/// t_final on the params domain.
inline Evolution evolve_from_stationary(const ModelParams& params, double t_final = 10.0,
                                        const FpeOptions& opt = {}) {
  params.validate();
  const Grid1D g = make_grid(params, opt);
  const auto init = stationary_density(lambda_at(params.t0, params), params.D, g, params.t0);
  return evolve(init, t_final, params, params.dt, opt);
}

/// Index of the first node strictly above x (the absorbing cut for a
/// threshold at x).
inline int cut_index(const Grid1D& g, double x) {
  if (!(x > g.x_start && x < g.x_end))
    throw ThresholdOutsideDomain("threshold " + std::to_string(x) + " outside domain");
  int i = static_cast<int>(std::floor((x - g.x_start) / g.h())) + 1;
  return std::clamp(i, 2, g.n_cells);
}

/// Per-step fraction of the population below x~(t) that crosses it, with
/// mass above x~ removed every substep:
///   p(t_n) = max(0, [M_below(t_{n-1}) - M_below(t_n)] / M_below(t_{n-1})).
/// The first density is the initial condition; the remaining entries fix
/// the reporting times (uniform spacing).
inline EscapeSeries threshold_crossing_rate(const std::vector<DensityField>& densities,
                                            const ThresholdCurve& threshold,
                                            const ModelParams& params,
                                            const FpeOptions& opt = {}) {
  if (densities.size() < 2) throw InvalidArgument("threshold_crossing_rate: need >= 2 densities");
  const double dt = densities[1].t - densities[0].t;
  const int sub = std::max(1, opt.substeps);
  const double dts = dt / sub;
  const Grid1D& g = densities.front().grid;
  DensityField cur = densities.front();
  auto absorb = [&](double t) {
    const int cut = cut_index(g, threshold.at(t));
    for (int i = cut; i < g.n_nodes(); ++i) cur.values[i] = 0.0;
    return cut;
  };
  int last_cut = absorb(cur.t);
  bool smooth = true;  // the initial truncation is a jump too
  std::vector<double> times{cur.t}, masses{trapezoid(g, cur.values)};
  CrankNicolsonStep cn(g, cur.t, dts, params, last_cut);
  for (std::size_t n = 1; n < densities.size(); ++n) {
    const double t_start = densities[0].t + static_cast<double>(n - 1) * dt;
    for (int k = 0; k < sub; ++k) {
      const double t_new = t_start + (k + 1) * dts;
      const int cut = cut_index(g, threshold.at(t_new));
      if (cut < last_cut) smooth = true;
      last_cut = cut;
      if (smooth) {
        // Rannacher start: two implicit Euler half steps after a jump
        for (int h = 0; h < 2; ++h) {
          cn.reset(g, t_start + (k + 0.25 + 0.5 * h) * dts, 0.5 * dts, params, cut, 1.0);
          cn.apply(cur.values);
        }
        smooth = false;
      } else {
        cn.reset(g, t_start + (k + 0.5) * dts, dts, params, cut);
        cn.apply(cur.values);
      }
      clip_roundoff(cur.values);
    }
    cur.t = densities[0].t + static_cast<double>(n) * dt;
    times.push_back(cur.t);
    masses.push_back(trapezoid(g, cur.values));
  }
  return detail::escape_from_masses(times, masses, dt);
}

/// Crossing-rate matrix: rows are reporting times, columns the y values.
struct ThresholdSweep {
  std::vector<double> times;
  std::vector<double> y_values;
  std::vector<std::vector<double>> rate;  // rate[time][y]
};

inline ThresholdSweep threshold_sweep(const std::vector<double>& y_values, const ModelParams& params,
                                      double t_final = 10.0, const FpeOptions& opt = {},
                                      unsigned jobs = 1) {
  for (std::size_t i = 0; i < y_values.size(); ++i) {
    if (!(y_values[i] > 0.0)) throw InvalidArgument("threshold_sweep: y must be positive");
    if (i > 0 && !(y_values[i] > y_values[i - 1]))
      throw InvalidArgument("threshold_sweep: y values must ascend");
  }
  params.validate();
  const Grid1D g = make_grid(params, opt);
  const auto init = stationary_density(lambda_at(params.t0, params), params.D, g, params.t0);
  const int n_rec = detail::steps_between(params.t0, t_final, params.dt);
  // Only the initial density and the reporting times are needed.
  std::vector<DensityField> frame{init};
  for (int n = 1; n <= n_rec; ++n) frame.push_back({g, params.t0 + n * params.dt, {}, 0.0});
  const Trajectory reference = deterministic_trajectory(params.x0, params.t0, t_final, params);

  std::vector<EscapeSeries> per_y(y_values.size());
  auto work = [&](std::size_t j) {
    per_y[j] = threshold_crossing_rate(frame, ThresholdCurve{reference, y_values[j]}, params, opt);
  };
  jobs = std::max(1u, jobs);
  for (std::size_t base = 0; base < y_values.size(); base += jobs) {
    std::vector<std::future<void>> fs;
    for (std::size_t j = base; j < std::min(y_values.size(), base + jobs); ++j)
      fs.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, work, j));
    for (auto& f : fs) f.get();
  }
  ThresholdSweep out;
  out.y_values = y_values;
  out.times = per_y.empty() ? std::vector<double>{} : per_y.front().times;
  out.rate.assign(out.times.size(), std::vector<double>(y_values.size()));
  for (std::size_t j = 0; j < y_values.size(); ++j)
    for (std::size_t n = 0; n < out.times.size(); ++n) out.rate[n][j] = per_y[j].rate[n];
  return out;
}

struct Moments {
  double mean;
  double variance;
};

/// Mean and variance of the mass-normalised density.
inline Moments moments(const DensityField& density) {
  const Grid1D& g = density.grid;
  const double m = trapezoid(g, density.values);
  if (!(m > 0.0)) throw ZeroMass("moments: density has zero mass");
  std::vector<double> w(density.values.size());
  for (int i = 0; i < g.n_nodes(); ++i) w[i] = g.node(i) * density.values[i];
  const double mean = trapezoid(g, w) / m;
  for (int i = 0; i < g.n_nodes(); ++i) {
    const double dx = g.node(i) - mean;
    w[i] = dx * dx * density.values[i];
  }
  return {mean, trapezoid(g, w) / m};
}

}  // namespace ratetip
