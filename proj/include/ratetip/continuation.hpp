#pragma once

// Parameter continuation over families of escape paths: the three seeding
// steps (T_init 0 -> 1, x_T x0 -> target, T_end sweep), root detection on
// m = -4D dM/dT_end, the optimal-time path and the (epsilon, D) sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bvp_path.hpp"
#include "errors.hpp"
#include "fokker_planck.hpp"
#include "model.hpp"

namespace ratetip {

struct ContinuationOptions {
  /// First step as a fraction of the distance to the target.
  double initial_fraction = 0.1;
  /// Upper step bound; 0 selects the per-parameter default (default_max_step).
  double max_step = 0.0;
  double min_step = 1e-5;
  /// Consecutive easy solves (at most easy_iterations Newton steps) before
  /// the step doubles.
  int grow_after = 3;
  int easy_iterations = 3;
  /// Hold m = 0 with T_end free instead of leaving m free.
  bool track_optimum = false;
  bool refine_roots = true;
  bool stop_at_first_root = false;
  bool keep_solutions = true;
  double m_tol = 1e-8;
  int max_arclength_steps = 200;
  SolveOptions solve{{}, 1};
};

/// Step cap per parameter; D steps are taken in log D.
inline double default_max_step(int parameter) {
  switch (parameter) {
    case kEps: return 0.02;
    case kD: return 0.25;
    case kTEnd: return 0.25;
    default: return 0.1;
  }
}

struct MonitorPoint {
  double value = 0.0;
  double T_end = 0.0;
  double M = 0.0;
  double m = 0.0;
  int iterations = 0;
};

struct RootBracket {
  double lo = 0.0, hi = 0.0;      // parameter values in stepping order
  double m_lo = 0.0, m_hi = 0.0;
};

struct ContinuationRun {
  int parameter = kTEnd;
  double start = 0.0;
  double target = 0.0;
  std::vector<MonitorPoint> monitor;      // every accepted solution
  std::vector<double> steps;              // accepted steps in stepping coordinates
  std::vector<PathSolution> solutions;    // when keep_solutions
  std::vector<RootBracket> brackets;
  std::vector<PathSolution> roots;        // refined m-roots
  std::vector<double> folds;              // parameter values where the family turned back
  PathSolution last;
  int failures = 0;
  int arclength_steps = 0;
};

namespace detail {

inline bool log_stepped(int parameter) { return parameter == kD; }
inline double to_coord(int parameter, double v) { return log_stepped(parameter) ? std::log(v) : v; }
inline double from_coord(int parameter, double c) { return log_stepped(parameter) ? std::exp(c) : c; }

inline std::vector<int> free_parameters(const ContinuationOptions& opt) {
  return opt.track_optimum ? std::vector<int>{kM, kTEnd} : std::vector<int>{kM, km};
}

/// Linear extrapolation of the unknowns from the last two solutions.
inline void extrapolate(PathSolution& trial, const PathSolution& last, const PathSolution* prev,
                        double ratio) {
  if (!prev || !(ratio > 0.0) || ratio > 4.0) return;
  colloc::Solution p = prev->sol.mesh.nodes == last.sol.mesh.nodes ? prev->sol
                                                                    : colloc::remesh(prev->sol, last.sol.mesh);
  for (std::size_t k = 0; k < trial.sol.y.size(); ++k)
    trial.sol.y[k] = last.sol.y[k] + ratio * (last.sol.y[k] - p.y[k]);
  for (int k : {kM, km, kTEnd})
    if (k != kTEnd || trial.sol.p[kTEnd] == last.sol.p[kTEnd])
      trial.sol.p[k] = last.sol.p[k] + ratio * (last.sol.p[k] - p.p[k]);
}

inline MonitorPoint monitor_point(const PathSolution& s, int parameter) {
  return {s.sol.p[parameter], s.T_end(), s.M(), s.m(), s.newton_iterations};
}

}  // namespace detail

/// Illinois (bracketed secant) iteration on m over the continuation
/// parameter between two solutions with m of opposite signs.
inline PathSolution refine_m_root(const PathSolution& a_sol, const PathSolution& b_sol, int parameter,
                                  const ContinuationOptions& opt = {}) {
  const std::vector<int> free{kM, km};
  double a = a_sol.sol.p[parameter], b = b_sol.sol.p[parameter];
  double fa = a_sol.m(), fb = b_sol.m();
  if (!(fa * fb < 0.0)) throw InvalidArgument("refine_m_root: m does not change sign");
  PathSolution sa = a_sol, sb = b_sol;
  if (std::abs(fa) < opt.m_tol) return sa;
  if (std::abs(fb) < opt.m_tol) return sb;
  for (int it = 0; it < 60; ++it) {
    const double c = (a * fb - b * fa) / (fb - fa);
    PathSolution trial = std::abs(c - a) < std::abs(c - b) ? sa : sb;
    trial.sol.p[parameter] = c;
    SolveOptions so = opt.solve;
    so.adapt_passes = 0;
    trial = solve_bvp(trial, free, so);
    const double fc = trial.m();
    if (std::abs(fc) < opt.m_tol) return trial;
    if (fc * fb < 0.0) {
      a = b;
      fa = fb;
      sa = sb;
    } else {
      fa *= 0.5;
    }
    b = c;
    fb = fc;
    sb = trial;
    if (std::abs(b - a) < 1e-14 * (1.0 + std::abs(b))) return trial;
  }
  throw MaxIterations(std::abs(fb));
}

namespace detail {

/// Pseudo-arclength steps along the secant of the last two solutions.
/// Returns once the parameter has moved past `stall` towards the target;
/// throws StepUnderflow on a fold or when the step collapses.
inline void arclength_escape(ContinuationRun& run, PathSolution& prev, PathSolution& last, double stall,
                             double dir, const ContinuationOptions& opt) {
  const int par = run.parameter;
  const auto free = free_parameters(opt);
  double sigma = 1.0;
  for (int k = 0; k < opt.max_arclength_steps; ++k) {
    if (prev.sol.mesh.nodes != last.sol.mesh.nodes) prev.sol = colloc::remesh(prev.sol, last.sol.mesh);
    colloc::System<PathProblem> sys(last.problem(), last.sol.mesh, free, nullptr);
    auto u0 = sys.pack(prev.sol), u1 = sys.pack(last.sol);
    u0.push_back(prev.sol.p[par]);
    u1.push_back(last.sol.p[par]);
    std::vector<double> tan(u1.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < u1.size(); ++i) {
      tan[i] = u1[i] - u0[i];
      norm += tan[i] * tan[i];
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw StepUnderflow(last.sol.p[par]);
    colloc::Arclength arc{par, {}, {}};
    arc.tangent.resize(u1.size());
    arc.predicted.resize(u1.size());
    for (std::size_t i = 0; i < u1.size(); ++i) {
      arc.tangent[i] = tan[i] / norm;
      arc.predicted[i] = u1[i] + sigma * tan[i];
    }
    PathSolution trial = last;
    sys.unpack(std::vector<double>(arc.predicted.begin(), arc.predicted.end() - 1), trial.sol);
    trial.sol.p[par] = arc.predicted.back();
    SolveOptions so = opt.solve;
    so.adapt_passes = 0;
    try {
      trial = solve_bvp(trial, free, so, &arc);
    } catch (const Error&) {
      ++run.failures;
      sigma *= 0.5;
      if (sigma < 1e-3) throw StepUnderflow(last.sol.p[par]);
      continue;
    }
    ++run.arclength_steps;
    const double moved = trial.sol.p[par] - last.sol.p[par];
    if (moved * dir < 0.0) {
      run.folds.push_back(last.sol.p[par]);
      throw StepUnderflow(last.sol.p[par]);
    }
    prev = last;
    last = trial;
    run.monitor.push_back(monitor_point(last, par));
    if (opt.keep_solutions) run.solutions.push_back(last);
    if ((to_coord(par, last.sol.p[par]) - stall) * dir > 0.0) return;
  }
  throw StepUnderflow(last.sol.p[par]);
}

}  // namespace detail

/// Natural-parameter continuation of `seed` in `parameter` up to `target`.
inline ContinuationRun continue_in(int parameter, double target, const PathSolution& seed,
                                   const ContinuationOptions& opt = {}) {
  if (parameter != kTInit && parameter != kXT && parameter != kTEnd && parameter != kEps && parameter != kD)
    throw InvalidArgument("continue_in: cannot continue in " + param_name(parameter));
  if (opt.track_optimum && parameter == kTEnd)
    throw InvalidArgument("continue_in: T_end is free when tracking the optimum");
  if (detail::log_stepped(parameter) && !(target > 0.0)) throw InvalidArgument("continue_in: D target must be positive");
  const auto free = detail::free_parameters(opt);

  ContinuationRun run;
  run.parameter = parameter;
  run.start = seed.sol.p[parameter];
  run.target = target;

  PathSolution last = seed;
  if (opt.track_optimum) last.sol.p[km] = 0.0;
  try {
    SolveOptions so = opt.solve;
    so.adapt_passes = 0;
    last = solve_bvp(last, free, so);
  } catch (const Error& e) {
    throw NoConvergedSeed(std::string("continue_in: seed does not converge: ") + e.what());
  }
  run.monitor.push_back(detail::monitor_point(last, parameter));
  if (opt.keep_solutions) run.solutions.push_back(last);

  const double c_target = detail::to_coord(parameter, target);
  double cur = detail::to_coord(parameter, last.sol.p[parameter]);
  const double span = std::abs(c_target - cur);
  const double dir = c_target >= cur ? 1.0 : -1.0;
  const double max_step = opt.max_step > 0.0 ? opt.max_step : default_max_step(parameter);
  double step = std::clamp(opt.initial_fraction * span, opt.min_step, max_step);
  double last_step = 0.0;
  int easy = 0;
  std::optional<PathSolution> prev;

  while ((c_target - cur) * dir > 0.0) {
    const double h = std::min(step, (c_target - cur) * dir);
    const double next = cur + dir * h;
    PathSolution trial = last;
    trial.sol.p[parameter] = (next - c_target) * dir >= 0.0 ? target : detail::from_coord(parameter, next);
    if (last_step > 0.0) detail::extrapolate(trial, last, prev ? &*prev : nullptr, h / last_step);
    try {
      trial = solve_bvp(trial, free, opt.solve);
    } catch (const Error&) {
      ++run.failures;
      easy = 0;
      step *= 0.5;
      if (step < opt.min_step) {
        if (!prev) throw StepUnderflow(last.sol.p[parameter]);
        PathSolution p0 = *prev;
        detail::arclength_escape(run, p0, last, cur, dir, opt);
        prev = p0;
        cur = detail::to_coord(parameter, last.sol.p[parameter]);
        step = opt.min_step;
        last_step = 0.0;
      }
      continue;
    }
    prev = std::move(last);
    last = std::move(trial);
    cur = detail::to_coord(parameter, last.sol.p[parameter]);
    last_step = h;
    run.steps.push_back(h);
    run.monitor.push_back(detail::monitor_point(last, parameter));
    if (opt.keep_solutions) run.solutions.push_back(last);
    if (last.newton_iterations <= opt.easy_iterations) {
      if (++easy >= opt.grow_after) {
        step = std::min(2.0 * step, max_step);
        easy = 0;
      }
    } else {
      easy = 0;
    }
    if (!opt.track_optimum && prev->m() * last.m() < 0.0) {
      run.brackets.push_back({prev->sol.p[parameter], last.sol.p[parameter], prev->m(), last.m()});
      if (opt.refine_roots) run.roots.push_back(refine_m_root(*prev, last, parameter, opt));
      if (opt.stop_at_first_root) break;
    }
  }
  run.last = std::move(last);
  return run;
}

struct SeedingOptions {
  int n_intervals = 200;
  double T_end_start = -9.0;
  double T_end_target = 20.0;
  bool stop_at_first_root = false;
  ContinuationOptions continuation{};
};

struct SeedingRuns {
  ContinuationRun step1;  // T_init 0 -> 1
  ContinuationRun step2;  // x_T x0 -> params.xT
  ContinuationRun step3;  // T_end sweep
};

/// Steps 1-3 from the trivial resting path at the given parameters.
inline SeedingRuns run_seeding_steps(const ModelParams& params, const SeedingOptions& opt = {}) {
  params.validate();
  SeedingRuns out;
  ContinuationOptions c = opt.continuation;
  c.track_optimum = false;
  PathSolution seed = trivial_seed(params, opt.T_end_start, opt.n_intervals);
  {
    ContinuationOptions c1 = c;
    c1.refine_roots = false;
    c1.stop_at_first_root = false;
    out.step1 = continue_in(kTInit, 1.0, seed, c1);
    out.step2 = continue_in(kXT, params.xT, out.step1.last, c1);
  }
  c.stop_at_first_root = opt.stop_at_first_root;
  out.step3 = continue_in(kTEnd, opt.T_end_target, out.step2.last, c);
  return out;
}

/// Solves with m = 0 held and T_end free, then checks that M at
/// T_end +- probe is below the value at the root.
inline PathSolution optimal_path_from_root(const PathSolution& root, double probe = 0.1,
                                           const SolveOptions& so = {{}, 1}) {
  PathSolution s = root;
  s.sol.p[km] = 0.0;
  s = solve_bvp(s, {kM, kTEnd}, so);
  for (double d : {-probe, probe}) {
    PathSolution q = s;
    q.sol.p[kTEnd] = s.T_end() + d;
    q = solve_bvp(q, {kM, km}, so);
    if (!(q.M() < s.M()))
      throw MNotMaximal("m-root at T_end = " + std::to_string(s.T_end()) + " is not a maximum of M");
  }
  return s;
}

/// Carries an optimal path (m = 0, T_end free) to new epsilon and D, then
/// re-checks that M is maximal in T_end.
inline PathSolution continue_optimal_path(const PathSolution& optimal, double epsilon, double D,
                                          const ContinuationOptions& opt = {}) {
  ContinuationOptions c = opt;
  c.track_optimum = true;
  c.keep_solutions = false;
  PathSolution s = optimal;
  const bool moved = epsilon != s.epsilon() || D != s.D();
  if (epsilon != s.epsilon()) s = continue_in(kEps, epsilon, s, c).last;
  if (D != s.D()) s = continue_in(kD, D, s, c).last;
  return moved ? optimal_path_from_root(s, 0.1, opt.solve) : s;
}

inline void check_validated_range(const ModelParams& params) {
  const double eps = params.ramp.epsilon, D = params.D;
  if (!(eps >= 1.0 && eps < 1.33)) throw InvalidArgument("optimal path: epsilon outside [1.0, 1.33)");
  if (!(D >= 1e-3 && D <= 0.1)) throw InvalidArgument("optimal path: D outside [1e-3, 0.1]");
}

/// Steps 1-3 at the reference values (epsilon = 1.25, D = 0.05), the optimal
/// path at the m-root, then continuation in epsilon and D to `params`.
inline PathSolution seed_optimal_path(const ModelParams& params, const SeedingOptions& opt = {}) {
  params.validate();
  check_validated_range(params);
  ModelParams ref = params;
  ref.ramp.epsilon = 1.25;
  ref.D = 0.05;
  SeedingOptions so = opt;
  so.stop_at_first_root = true;
  const auto runs = run_seeding_steps(ref, so);
  if (runs.step3.roots.empty()) throw NoCrossing("seed_optimal_path: m has no sign change along T_end");
  const PathSolution s = optimal_path_from_root(runs.step3.roots.front(), 0.1, opt.continuation.solve);
  return continue_optimal_path(s, params.ramp.epsilon, params.D, opt.continuation);
}

/// First time where x1(t) - curve(t) changes sign, refined by bisection.
inline double crossing_time(const PathSolution& path, const std::function<double(double)>& curve,
                            double t_lo, double t_hi, double tol = 1e-6) {
  const double a = std::max(t_lo, path.params.t0), b = std::min(t_hi, path.T_end());
  if (!(a < b)) throw InvalidArgument("crossing_time: path and curve do not overlap");
  auto g = [&](double t) { return path.at_time(t, 0) - curve(t); };
  const int n = std::max(200, 4 * path.mesh().n_intervals());
  double t_prev = a, g_prev = g(a);
  for (int k = 1; k <= n; ++k) {
    const double t = a + (b - a) * k / n;
    const double gt = g(t);
    if (g_prev == 0.0) return t_prev;
    if ((g_prev < 0.0) != (gt < 0.0)) {
      double lo = t_prev, hi = t, glo = g_prev;
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        const double gm = g(mid);
        if ((gm < 0.0) == (glo < 0.0)) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    t_prev = t;
    g_prev = gt;
  }
  throw NoCrossing("crossing_time: the path does not cross the curve");
}

inline double crossing_time(const PathSolution& path, const Trajectory& curve, double tol = 1e-6) {
  if (curve.times.empty()) throw InvalidArgument("crossing_time: empty curve");
  return crossing_time(path, [&](double t) { return curve.at(t); }, curve.times.front(), curve.times.back(), tol);
}

inline double crossing_time(const PathSolution& path, const ThresholdCurve& curve, double tol = 1e-6) {
  const auto& r = curve.reference;
  if (r.times.empty()) throw InvalidArgument("crossing_time: empty curve");
  return crossing_time(path, [&](double t) { return curve.at(t); }, r.times.front(), r.times.back(), tol);
}

struct SweepCell {
  double T_end = std::numeric_limits<double>::quiet_NaN();
  double t_cross = std::numeric_limits<double>::quiet_NaN();
  double M = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
};

struct SweepGrid {
  std::vector<double> epsilon_values;
  std::vector<double> D_values;
  std::vector<SweepCell> cells;  // epsilon-major

  SweepCell& cell(std::size_t i, std::size_t j) { return cells[i * D_values.size() + j]; }
  const SweepCell& cell(std::size_t i, std::size_t j) const { return cells[i * D_values.size() + j]; }
};

inline std::vector<double> linspace(double a, double b, int n) {
  if (n < 1) throw InvalidArgument("linspace: n < 1");
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) v[k] = n == 1 ? a : a + (b - a) * k / (n - 1);
  return v;
}

inline std::vector<double> logspace(double a, double b, int n) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("logspace: bounds must be positive");
  auto v = linspace(std::log(a), std::log(b), n);
  for (double& x : v) x = std::exp(x);
  v.front() = a;
  v.back() = b;
  return v;
}

inline std::vector<double> default_epsilon_axis() { return linspace(1.05, 1.25, 11); }
inline std::vector<double> default_D_axis() { return logspace(1e-3, 1e-1, 40); }

struct SweepOptions {
  SeedingOptions seeding{};
  int jobs = 1;
};

namespace detail {

/// One epsilon column: Steps 1-3 at the largest D, then D downwards.
inline std::vector<SweepCell> sweep_column(double eps, const std::vector<double>& D_values,
                                           const ModelParams& base, const SweepOptions& opt) {
  std::vector<SweepCell> col(D_values.size());
  ModelParams p = base;
  p.ramp.epsilon = eps;
  p.D = D_values.back();
  const Trajectory ws = stable_manifold_ws_uplus(p);
  auto record = [&](std::size_t j, const PathSolution& s) {
    SweepCell& c = col[j];
    c.T_end = s.T_end();
    c.M = s.M();
    c.residual = s.residual;
    try {
      c.t_cross = crossing_time(s, ws);
      c.converged = true;
    } catch (const Error&) {
      c.converged = false;
    }
  };
  PathSolution s;
  try {
    SeedingOptions so = opt.seeding;
    so.stop_at_first_root = true;
    const auto runs = run_seeding_steps(p, so);
    if (runs.step3.roots.empty()) return col;
    s = optimal_path_from_root(runs.step3.roots.front(), 0.1, so.continuation.solve);
  } catch (const Error&) {
    return col;
  }
  const std::size_t top = D_values.size() - 1;
  record(top, s);
  ContinuationOptions c = opt.seeding.continuation;
  c.track_optimum = true;
  c.keep_solutions = false;
  for (std::size_t j = top; j-- > 0;) {
    try {
      s = continue_in(kD, D_values[j], s, c).last;
      record(j, s);
    } catch (const Error&) {
      col[j].converged = false;
    }
  }
  return col;
}

}  // namespace detail

/// Optimal-path sweep over the (epsilon, D) plane.  Columns are independent
/// and run on up to opt.jobs threads.
inline SweepGrid sweep_epsilon_D(const std::vector<double>& epsilon_values, const std::vector<double>& D_values,
                                 const ModelParams& base = {}, const SweepOptions& opt = {}) {
  if (epsilon_values.empty() || D_values.size() < 1) throw InvalidArgument("sweep: empty axis");
  if (!std::is_sorted(epsilon_values.begin(), epsilon_values.end()) ||
      !std::is_sorted(D_values.begin(), D_values.end()))
    throw InvalidArgument("sweep: axes must be ascending");
  SweepGrid g{epsilon_values, D_values, std::vector<SweepCell>(epsilon_values.size() * D_values.size())};
  const std::size_t jobs = static_cast<std::size_t>(std::max(1, opt.jobs));
  std::size_t next = 0;
  while (next < epsilon_values.size()) {
    std::vector<std::pair<std::size_t, std::future<std::vector<SweepCell>>>> batch;
    for (; next < epsilon_values.size() && batch.size() < jobs; ++next)
      batch.emplace_back(next, std::async(std::launch::async, detail::sweep_column, epsilon_values[next],
                                          std::cref(D_values), std::cref(base), std::cref(opt)));
    for (auto& [i, f] : batch) {
      auto col = f.get();
      for (std::size_t j = 0; j < col.size(); ++j) g.cell(i, j) = col[j];
    }
  }
  return g;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int n = 0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("linear_fit: size mismatch");
  const int n = static_cast<int>(x.size());
  if (n < 3) throw InsufficientPoints("linear_fit: need at least 3 points");
  double mx = 0, my = 0;
  for (int k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (int k = 0; k < n; ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (!(sxx > 0.0)) throw InsufficientPoints("linear_fit: regressor is constant");
  LinearFit f;
  f.n = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

struct DelayFit {
  double epsilon = 0.0;
  LinearFit fit;
};

/// Per-epsilon least squares of t_cross against ln(1 / sqrt(2D)) over the
/// converged cells with D in [D_lo, D_hi].
inline std::vector<DelayFit> delay_law_fit(const SweepGrid& grid, double D_lo = 1e-3, double D_hi = 1e-2,
                                           int min_points = 10) {
  std::vector<DelayFit> out;
  for (std::size_t i = 0; i < grid.epsilon_values.size(); ++i) {
    std::vector<double> x, y;
    for (std::size_t j = 0; j < grid.D_values.size(); ++j) {
      const double D = grid.D_values[j];
      const auto& c = grid.cell(i, j);
      if (D < D_lo * (1 - 1e-12) || D > D_hi * (1 + 1e-12) || !c.converged) continue;
      x.push_back(std::log(1.0 / std::sqrt(2.0 * D)));
      y.push_back(c.t_cross);
    }
    if (static_cast<int>(x.size()) < min_points)
      throw InsufficientPoints("delay_law_fit: fewer than " + std::to_string(min_points) +
                               " converged cells at epsilon = " + std::to_string(grid.epsilon_values[i]));
    out.push_back({grid.epsilon_values[i], linear_fit(x, y)});
  }
  return out;
}

}  // namespace ratetip
