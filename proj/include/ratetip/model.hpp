#pragma once

// Ramped saddle-node normal form  x' = (x + lambda(t))^2 - 1  with a tanh
// ramp for lambda(t): closed-form model terms, equilibria, deterministic
// trajectories, invariant manifolds and critical-rate detection.
//
// Scalar functions are templated so that the collocation solver can evaluate
// them on dual numbers.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "ode.hpp"

namespace ratetip {

struct RampParams {
  double epsilon = 1.25;
  double lambda_max = 3.0;

  void validate() const {
    if (!(epsilon > 0.0)) throw InvalidArgument("ramp: epsilon must be positive");
    if (!(lambda_max > 0.0)) throw InvalidArgument("ramp: lambda_max must be positive");
  }
};

/// All scalar parameters of the stochastic ramped system.  Defaults are the
/// headline configuration (epsilon 1.25, D 0.008, domain [-6, 2]).
struct ModelParams {
  RampParams ramp;
  double D = 0.008;
  double t0 = -10.0;
  double x0 = -1.0;
  double xT = 4.0;
  double x_start = -6.0;
  double x_end = 2.0;
  double dt = 0.01;
  /// Holds lambda fixed (the epsilon = 0 limit around a chosen level) for the
  /// density and ensemble solvers.
  std::optional<double> frozen_lambda;

  void validate() const {
    ramp.validate();
    if (!(D > 0.0)) throw InvalidArgument("model: D must be positive");
    if (!(dt > 0.0)) throw InvalidArgument("model: dt must be positive");
    if (!(x_start < x0 && x0 < x_end))
      throw InvalidArgument("model: require x_start < x0 < x_end");
  }
};

// ---------------------------------------------------------------------------
// Ramp

/// (lambda_max / 2) [tanh(lambda_max eps t / 2) + 1], evaluated in the
/// logistic form lambda_max / (1 + exp(-lambda_max eps t)), which keeps full
/// relative precision in the far past where tanh + 1 cancels.
template <class S>
S lambda_of_t(const S& t, const RampParams& ramp) {
  using std::exp;
  const double lm = ramp.lambda_max;
  return lm / (1.0 + exp(-lm * ramp.epsilon * t));
}

/// Ramp speed; uses the sech^2 form (accurate in the far tails).
template <class S>
S lambda_dot(const S& t, const RampParams& ramp) {
  using std::cosh;
  const double lm = ramp.lambda_max;
  const S c = cosh(0.5 * lm * ramp.epsilon * t);
  return 0.25 * ramp.epsilon * lm * lm / (c * c);
}

/// Ramp speed as a function of lambda (the autonomous lambda equation).
template <class S>
S h3(const S& lam, const RampParams& ramp) {
  return ramp.epsilon * lam * (ramp.lambda_max - lam);
}

template <class S>
S dh3_dlam(const S& lam, const RampParams& ramp) {
  return ramp.epsilon * (ramp.lambda_max - 2.0 * lam);
}

// ---------------------------------------------------------------------------
// Drift and potential

template <class S>
S drift(const S& x, const S& lam) {
  const S s = x + lam;
  return s * s - 1.0;
}

template <class S>
struct PotentialTerms {
  S U, U_x, U_xx, U_t;
};

/// U(x, lambda) = -x^3/3 - lambda x^2 + (1 - lambda^2) x and its derivatives;
/// U_t is taken along the ramp, lambda' = h3(lambda).
template <class S>
PotentialTerms<S> potential_at(const S& x, const S& lam, const RampParams& ramp) {
  const S x2 = x * x;
  PotentialTerms<S> p;
  p.U = -x2 * x / 3.0 - lam * x2 + (1.0 - lam * lam) * x;
  p.U_x = -x2 - 2.0 * lam * x + 1.0 - lam * lam;
  p.U_xx = -2.0 * (x + lam);
  p.U_t = -h3(lam, ramp) * x * (x + 2.0 * lam);
  return p;
}

/// lambda(t) as seen by the density and ensemble solvers.
inline double lambda_at(double t, const ModelParams& p) {
  return p.frozen_lambda ? *p.frozen_lambda : lambda_of_t(t, p.ramp);
}

inline PotentialTerms<double> potential_terms(double x, double t, const ModelParams& params) {
  return potential_at(x, lambda_of_t(t, params.ramp), params.ramp);
}

/// V_s = (U_x)^2 / 4D - U_xx / 2 - U_t / 2D, written in s = x + lambda.
template <class S>
S v_s_at(const S& x, const S& lam, const RampParams& ramp, double D) {
  const S s = x + lam;
  const S w = 1.0 - s * s;
  return w * w / (4.0 * D) + s + h3(lam, ramp) * (s * s - lam * lam) / (2.0 * D);
}

inline double v_s(double x, double t, const ModelParams& params) {
  return v_s_at(x, lambda_of_t(t, params.ramp), params.ramp, params.D);
}

template <class S>
S dv_s_dlam_at(const S& x, const S& lam, const RampParams& ramp, double D) {
  const S s = x + lam;
  return -s * (1.0 - s * s) / D + 1.0 +
         (dh3_dlam(lam, ramp) * (s * s - lam * lam) + 2.0 * h3(lam, ramp) * x) / (2.0 * D);
}

/// h2 = 2D dV_s/dx = 2 s^3 - 2 s + 2D + 2 h3(lambda) s.
template <class S>
S h2_at(const S& x, const S& lam, const RampParams& ramp, double D) {
  const S s = x + lam;
  return 2.0 * s * s * s - 2.0 * s + 2.0 * D + 2.0 * h3(lam, ramp) * s;
}

inline double h2(double x1, double t, const ModelParams& params) {
  return h2_at(x1, lambda_of_t(t, params.ramp), params.ramp, params.D);
}

template <class S>
S dh2_dx_at(const S& x, const S& lam, const RampParams& ramp) {
  const S s = x + lam;
  return 6.0 * s * s - 2.0 + 2.0 * h3(lam, ramp);
}

template <class S>
S dh2_dlam_at(const S& x, const S& lam, const RampParams& ramp) {
  const S s = x + lam;
  return 6.0 * s * s - 2.0 + 2.0 * h3(lam, ramp) + 2.0 * dh3_dlam(lam, ramp) * s;
}

// ---------------------------------------------------------------------------
// Equilibria

struct PhasePoint {
  double x;
  double lam;
};

struct EquilibriumSet {
  PhasePoint s_minus, u_minus, s_plus, u_plus;
};

inline EquilibriumSet equilibria(const RampParams& ramp) {
  const double lm = ramp.lambda_max;
  return {{-1.0, 0.0}, {1.0, 0.0}, {-lm - 1.0, lm}, {-lm + 1.0, lm}};
}

// ---------------------------------------------------------------------------
// Trajectories

enum class TrajectoryKind { unstable_manifold_WuSminus, stable_manifold_WsUplus, deterministic_reference };

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::unstable_manifold_WuSminus: return "unstable_manifold_WuSminus";
    case TrajectoryKind::stable_manifold_WsUplus: return "stable_manifold_WsUplus";
    case TrajectoryKind::deterministic_reference: return "deterministic_reference";
  }
  return "unknown";
}

struct Trajectory {
  std::vector<double> times;
  std::vector<double> states;
  TrajectoryKind kind = TrajectoryKind::deterministic_reference;

  /// Linear interpolation on the sample grid; clamps outside the range.
  double at(double t) const {
    if (times.empty()) throw InvalidArgument("trajectory: empty");
    if (t <= times.front()) return states.front();
    if (t >= times.back()) return states.back();
    const double h = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    auto i = static_cast<std::size_t>((t - times.front()) / h);
    if (i + 1 >= times.size()) i = times.size() - 2;
    while (i > 0 && times[i] > t) --i;
    while (i + 2 < times.size() && times[i + 1] < t) ++i;
    const double w = (t - times[i]) / (times[i + 1] - times[i]);
    return (1.0 - w) * states[i] + w * states[i + 1];
  }
};

struct TrajectoryOptions {
  double blowup = 10.0;
  ode::Tolerances tol{};
};

namespace detail {

/// Reporting grid from a to b with spacing dt (either direction); the last
/// sample is exactly b.
inline std::vector<double> reporting_grid(double a, double b, double dt) {
  const double span = std::abs(b - a);
  const auto n = static_cast<long>(std::ceil(span / dt - 1e-9));
  std::vector<double> g;
  g.reserve(static_cast<std::size_t>(n) + 1);
  const double dir = b >= a ? 1.0 : -1.0;
  for (long i = 0; i < n; ++i) g.push_back(a + dir * static_cast<double>(i) * dt);
  g.push_back(b);
  return g;
}

template <class Diverged>
std::vector<double> sample(const RampParams& ramp, const std::vector<double>& grid, double x_init,
                           const TrajectoryOptions& opt) {
  auto rhs = [&](double t, double x) { return drift(x, lambda_of_t(t, ramp)); };
  auto stop = [&](double, double x) { return !(std::abs(x) <= opt.blowup); };
  std::vector<double> xs{x_init};
  xs.reserve(grid.size());
  double x = x_init;
  double h = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto seg = ode::integrate(rhs, grid[i - 1], x, grid[i], opt.tol, stop, h);
    if (seg.stopped) throw Diverged(seg.t);
    x = seg.y;
    h = seg.h_next;
    xs.push_back(x);
  }
  return xs;
}

}  // namespace detail

/// Trajectory of x' = f(x, lambda(t)) sampled every params.dt.
inline Trajectory deterministic_trajectory(double x_init, double t_init, double t_final,
                                           const ModelParams& params,
                                           const TrajectoryOptions& opt = {}) {
  if (!(t_init < t_final)) throw InvalidArgument("deterministic_trajectory: t_init < t_final");
  Trajectory tr;
  tr.kind = TrajectoryKind::deterministic_reference;
  tr.times = detail::reporting_grid(t_init, t_final, params.dt);
  tr.states = detail::sample<DivergedBeforeFinalTime>(params.ramp, tr.times, x_init, opt);
  return tr;
}

/// W^u(S-) sampled on [t_span.first, t_span.second]: seeded on the linearised
/// manifold at the left end, where lambda is exponentially small.
inline Trajectory unstable_manifold_wu_sminus(const ModelParams& params, double t_begin = -10.0,
                                              double t_end = 10.0,
                                              const TrajectoryOptions& opt = {}) {
  const auto& r = params.ramp;
  const double mu = r.epsilon * r.lambda_max;
  const double x_seed = -1.0 - 2.0 / (2.0 + mu) * lambda_of_t(t_begin, r);
  Trajectory tr;
  tr.kind = TrajectoryKind::unstable_manifold_WuSminus;
  tr.times = detail::reporting_grid(t_begin, t_end, params.dt);
  tr.states = detail::sample<DivergedBeforeFinalTime>(r, tr.times, x_seed, opt);
  return tr;
}

/// W^s(U+) by backward integration from the linearised manifold at the right
/// end.  Returned in ascending time order.
inline Trajectory stable_manifold_ws_uplus(const ModelParams& params, double t_begin = -10.0,
                                           double t_end = 10.0,
                                           const TrajectoryOptions& opt = {}) {
  const auto& r = params.ramp;
  const double mu = r.epsilon * r.lambda_max;
  const double gap = r.lambda_max - lambda_of_t(t_end, r);
  const double x_seed = 1.0 - r.lambda_max + 2.0 / (2.0 + mu) * gap;
  auto grid = detail::reporting_grid(t_end, t_begin, params.dt);
  auto xs = detail::sample<BackwardIntegrationDiverged>(r, grid, x_seed, opt);
  Trajectory tr;
  tr.kind = TrajectoryKind::stable_manifold_WsUplus;
  tr.times.assign(grid.rbegin(), grid.rend());
  tr.states.assign(xs.rbegin(), xs.rend());
  return tr;
}

/// True when the deterministic trajectory from (x0 = -1, t = -10) escapes to
/// +infinity.  Trajectories still bounded at t = 30 are classified by their
/// side of the post-ramp saddle U+.
inline bool tips(double epsilon, double lambda_max, const ode::Tolerances& tol = {}) {
  RampParams ramp{epsilon, lambda_max};
  auto rhs = [&](double t, double x) { return drift(x, lambda_of_t(t, ramp)); };
  auto stop = [](double, double x) { return !(std::abs(x) <= 10.0); };
  const auto seg = ode::integrate(rhs, -10.0, -1.0, 30.0, tol, stop);
  return seg.stopped || seg.y > 1.0 - lambda_max;
}

struct CriticalRateResult {
  double epsilon_c;
  std::vector<std::pair<double, bool>> trace;  // (epsilon, tips) per bisection probe
};

inline CriticalRateResult find_critical_epsilon_traced(double lambda_max, double tol,
                                                       double lo = 1.0, double hi = 1.6,
                                                       const ode::Tolerances& ode_tol = {}) {
  if (!(tol > 0.0)) throw InvalidArgument("find_critical_epsilon: tol must be positive");
  CriticalRateResult res{};
  const bool tip_lo = tips(lo, lambda_max, ode_tol);
  const bool tip_hi = tips(hi, lambda_max, ode_tol);
  res.trace.emplace_back(lo, tip_lo);
  res.trace.emplace_back(hi, tip_hi);
  if (tip_lo == tip_hi)
    throw BracketInvalid("find_critical_epsilon: bracket [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + "] does not straddle the critical rate");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const bool t = tips(mid, lambda_max, ode_tol);
    res.trace.emplace_back(mid, t);
    (t == tip_lo ? lo : hi) = mid;
  }
  res.epsilon_c = 0.5 * (lo + hi);
  return res;
}

inline double find_critical_epsilon(double lambda_max, double tol, double lo = 1.0,
                                    double hi = 1.6) {
  return find_critical_epsilon_traced(lambda_max, tol, lo, hi).epsilon_c;
}

}  // namespace ratetip
