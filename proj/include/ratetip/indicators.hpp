#pragma once

// Ensemble early-warning indicators (lag-1 autocorrelation, variance, decay
// rate) computed from the density, OU baselines, and onset detection.

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "fokker_planck.hpp"
#include "model.hpp"

namespace ratetip {

struct IndicatorSeries {
  std::vector<double> times;
  std::vector<double> autocorrelation;
  std::vector<double> variance;
  std::vector<double> decay_rate;  // (1 - a_n) / dt
  std::vector<double> mean;
  std::vector<double> survival;  // surviving mass
  double dt = 0.01;
  /// Set when the series ends early (too few survivors).
  bool truncated = false;
};

struct OUBaseline {
  double theta;
  double a;
  double V;
};

inline OUBaseline ou_baseline(double theta, double D, double dt) {
  if (!(theta > 0.0)) throw InvalidArgument("ou_baseline: theta must be positive");
  if (!(D > 0.0)) throw InvalidArgument("ou_baseline: D must be positive");
  if (!(dt >= 0.0)) throw InvalidArgument("ou_baseline: dt must be non-negative");
  return {theta, std::exp(-theta * dt), D / theta};
}

/// Kramers escape time pi * exp((4/3) / D); +inf when the exponential
/// overflows.
inline double kramers_time(double D) {
  if (!(D > 0.0)) throw InvalidArgument("kramers_time: D must be positive");
  const double e = (4.0 / 3.0) / D;
  if (e > std::log(std::numeric_limits<double>::max() / M_PI))
    return std::numeric_limits<double>::infinity();
  return M_PI * std::exp(e);
}

namespace detail {

inline double weighted(const Grid1D& g, const std::vector<double>& v, int power) {
  double s = 0.0;
  for (int i = 1; i < g.n_cells; ++i) s += std::pow(g.node(i), power) * v[i];
  return s * g.h();  // boundary entries are zero
}

}  // namespace detail

/// Lag-1 indicators of the surviving population by joint-moment
/// propagation.  Over each reporting step the density P, Q = x P and
/// R = x^2 P (taken at t_{n-1}) are advanced with the same operator; then
/// with m = mass(P_n):
///   E[X_{n-1} X_n] = int x Q_n / m,  E[X_{n-1}] = int Q_n / m,
///   E[X_{n-1}^2] = int R_n / m,
/// i.e. all moments are conditioned on survival to t_n.
inline IndicatorSeries lag1_series(const ModelParams& params, std::pair<double, double> t_span,
                                   const FpeOptions& opt = {}) {
  params.validate();
  const auto [ta, tb] = t_span;
  if (!(ta < tb)) throw InvalidArgument("lag1_series: empty time span");
  const Grid1D g = make_grid(params, opt);
  DensityField cur = stationary_density(lambda_at(ta, params), params.D, g, ta);
  const int n_rec = detail::steps_between(ta, tb, params.dt);
  const int sub = std::max(1, opt.substeps);
  const double dts = params.dt / sub;

  IndicatorSeries out;
  out.dt = params.dt;
  std::vector<double>& P = cur.values;
  std::vector<double> Q(P.size()), R(P.size());
  CrankNicolsonStep cn(g, ta + 0.5 * dts, dts, params);
  for (int n = 1; n <= n_rec; ++n) {
    for (int i = 0; i < g.n_nodes(); ++i) {
      const double x = g.node(i);
      Q[i] = x * P[i];
      R[i] = x * x * P[i];
    }
    const double t_start = ta + (n - 1) * params.dt;
    for (int k = 0; k < sub; ++k) {
      cn.reset(g, t_start + (k + 0.5) * dts, dts, params);
      cn.apply(P);
      clip_roundoff(P);
      cn.apply(Q);
      cn.apply(R);
    }
    const double m = trapezoid(g, P);
    if (!(m > 0.0)) throw ZeroMass("lag1_series: no surviving mass");
    const double mean_n = detail::weighted(g, P, 1) / m;
    const double var_n = detail::weighted(g, P, 2) / m - mean_n * mean_n;
    const double mean_p = trapezoid(g, Q) / m;
    const double var_p = trapezoid(g, R) / m - mean_p * mean_p;
    const double cov = detail::weighted(g, Q, 1) / m - mean_p * mean_n;
    if (!(var_n * var_p > 0.0)) throw ZeroVariance("lag1_series: vanishing variance");
    const double a = cov / std::sqrt(var_n * var_p);
    out.times.push_back(ta + n * params.dt);
    out.autocorrelation.push_back(a);
    out.variance.push_back(var_n);
    out.decay_rate.push_back((1.0 - a) / params.dt);
    out.mean.push_back(mean_n);
    out.survival.push_back(m);
  }
  return out;
}

inline IndicatorSeries lag1_series(const ModelParams& params) {
  return lag1_series(params, {params.t0, 10.0});
}

/// Indicator series per upper domain boundary.
inline std::vector<IndicatorSeries> domain_sweep(const std::vector<double>& x_end_values,
                                                 const ModelParams& params,
                                                 std::pair<double, double> t_span,
                                                 const FpeOptions& opt = {}, unsigned jobs = 1) {
  for (double xe : x_end_values)
    if (!(xe > params.x_start + 1.0))
      throw InvalidArgument("domain_sweep: x_end must exceed x_start + 1");
  // Keep the cell width of the default domain.
  const double h = (params.x_end - params.x_start) / opt.n_cells;
  std::vector<IndicatorSeries> out(x_end_values.size());
  auto work = [&](std::size_t j) {
    ModelParams p = params;
    p.x_end = x_end_values[j];
    FpeOptions o = opt;
    o.n_cells = std::max(16, static_cast<int>(std::lround((p.x_end - p.x_start) / h)));
    out[j] = lag1_series(p, t_span, o);
  };
  jobs = std::max(1u, jobs);
  for (std::size_t base = 0; base < x_end_values.size(); base += jobs) {
    std::vector<std::future<void>> fs;
    for (std::size_t j = base; j < std::min(x_end_values.size(), base + jobs); ++j)
      fs.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, work, j));
    for (auto& f : fs) f.get();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Onset detection

struct OnsetRule {
  double window_begin = -6.0;
  double window_end = -4.0;
  double fraction = 0.05;
  bool rising = true;  // false: detect a drop below the plateau
};

inline double plateau_mean(const std::vector<double>& times, const std::vector<double>& values,
                           double a, double b) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= a && times[i] <= b) s += values[i], ++n;
  if (n == 0) throw InvalidArgument("plateau_mean: window holds no samples");
  return s / n;
}

/// First time after the plateau window at which the series leaves the
/// plateau mean by the given fraction in the given direction.
inline std::optional<double> onset_time(const std::vector<double>& times,
                                        const std::vector<double>& values, const OnsetRule& rule = {}) {
  const double base = plateau_mean(times, values, rule.window_begin, rule.window_end);
  const double hi = base * (1.0 + rule.fraction);
  const double lo = base * (1.0 - rule.fraction);
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] <= rule.window_end) continue;
    if (rule.rising ? values[i] > hi : values[i] < lo) return times[i];
  }
  return std::nullopt;
}

/// Autocorrelation onset measured on the distance to one, 1 - a_n, which
/// shrinks by the rule fraction (a itself sits at 0.98 and cannot rise 5%).
inline std::optional<double> autocorrelation_onset(const IndicatorSeries& s, OnsetRule rule = {}) {
  std::vector<double> gap(s.autocorrelation.size());
  for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = 1.0 - s.autocorrelation[i];
  rule.rising = false;
  return onset_time(s.times, gap, rule);
}

inline std::optional<double> variance_onset(const IndicatorSeries& s, OnsetRule rule = {}) {
  rule.rising = true;
  return onset_time(s.times, s.variance, rule);
}

inline std::optional<double> decay_rate_onset(const IndicatorSeries& s, OnsetRule rule = {}) {
  rule.rising = false;
  return onset_time(s.times, s.decay_rate, rule);
}

}  // namespace ratetip
