#pragma once

// Most-likely escape path as a boundary-value problem on tau in [0, 1],
// t = t0 + tau (T_end - t0):
//
//   x1' = x2 T                        z1' = x2 + z2 T
//   x2' = h2(x1, lam) T T_init        z2' = T_init (h2 + (h2_x z1 + h2_lam z3) T)
//   lam' = h3(lam) T                  z3' = h3 + h3_lam z3 T
//
// with T = T_end - t0, z = d(x1, x2, lam)/dT_end, boundary conditions
// x1(0) = x0, x1(1) = x_T, lam(0) = lambda(t0), z1(0) = z1(1) = z3(0) = 0,
// and two integral conditions defining M (log of the path probability
// weight) and m = -4D dM/dT_end.
//
// The lam equation started from lambda(t0) ~ 1e-16 grows like
// exp(lambda_max eps t), which makes the discretised problem singular to
// working precision once the ramp is inside the window.  The solver
// therefore carries l = log(lam / (lambda_max - lam)) and w = dl/dT_end in
// slots 2 and 5 (l' = lambda_max eps T, w' = lambda_max eps) and maps them
// back with lam = lambda_max / (1 + exp(-l)), z3 = lam (lambda_max - lam) w
// / lambda_max.  Every public accessor returns lam and z3.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "collocation.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace ratetip {

/// Parameter slots of the path problem.
enum PathParam : int { kTEnd = 0, kTInit, kXT, kM, km, kEps, kD, kX0, kPathParams };

inline std::string param_name(int k) {
  static const char* names[] = {"T_end", "T_init", "x_T", "M", "m", "epsilon", "D", "x0"};
  return (k >= 0 && k < kPathParams) ? names[k] : "?";
}

inline int param_index(const std::string& name) {
  for (int k = 0; k < kPathParams; ++k)
    if (param_name(k) == name) return k;
  throw InvalidArgument("unknown path parameter '" + name + "'");
}

/// Model terms with epsilon and D as (possibly dual) arguments.
template <class S>
struct PathTerms {
  S s, h3, h3_l, h2, h2_x, h2_l, vs, vs_l;

  PathTerms(const S& x, const S& lam, const S& eps, const S& D, double lmax) {
    s = x + lam;
    h3 = eps * lam * (lmax - lam);
    h3_l = eps * (lmax - 2.0 * lam);
    const S s2 = s * s;
    h2 = 2.0 * s2 * s - 2.0 * s + 2.0 * D + 2.0 * h3 * s;
    h2_x = 6.0 * s2 - 2.0 + 2.0 * h3;
    h2_l = h2_x + 2.0 * h3_l * s;
    const S w = 1.0 - s2;
    const S l2 = lam * lam;
    vs = w * w / (4.0 * D) + s + h3 * (s2 - l2) / (2.0 * D);
    vs_l = -s * w / D + 1.0 + (h3_l * (s2 - l2) + 2.0 * h3 * x) / (2.0 * D);
  }
};

template <class S>
S ramp_lambda(const S& t, const S& eps, double lmax) {
  using std::exp;
  return lmax / (1.0 + exp(-lmax * eps * t));
}

template <class S>
S potential_value(const S& x, const S& lam) {
  return -x * x * x / 3.0 - lam * x * x + (1.0 - lam * lam) * x;
}

/// U_t at (x, lam) along the ramp.
template <class S>
S potential_rate(const S& x, const S& lam, const S& eps, double lmax) {
  return -(eps * lam * (lmax - lam)) * x * (x + 2.0 * lam);
}

/// Which integrand forms the integral conditions use.
enum class MForm { quadratic, onsager_machlup };

struct PathProblem {
  static constexpr int n = 6, np = kPathParams, nbc = 6, ni = 2;
  double lambda_max = 3.0;
  double t0 = -10.0;
  MForm form = MForm::quadratic;

  /// lam and z3 from the solver slots (l, w).
  template <class S>
  void physical(const S* y, S& lam, S& z3) const {
    using std::exp;
    lam = lambda_max / (1.0 + exp(-y[2]));
    z3 = lam * (lambda_max - lam) / lambda_max * y[5];
  }

  template <class S>
  void rhs(double, const S* y, const S* p, S* f) const {
    const S T = p[kTEnd] - t0;
    S lam, z3;
    physical(y, lam, z3);
    const PathTerms<S> q(y[0], lam, p[kEps], p[kD], lambda_max);
    f[0] = y[1] * T;
    f[1] = q.h2 * T * p[kTInit];
    f[2] = lambda_max * p[kEps] * T;
    f[3] = y[1] + y[4] * T;
    f[4] = p[kTInit] * (q.h2 + (q.h2_x * y[3] + q.h2_l * z3) * T);
    f[5] = lambda_max * p[kEps];
  }

  template <class S>
  void bc(const S* ya, const S* yb, const S* p, S* r) const {
    r[0] = ya[0] - p[kX0];
    r[1] = yb[0] - p[kXT];
    r[2] = ya[2] - lambda_max * p[kEps] * t0;
    r[3] = ya[3];
    r[4] = yb[3];
    r[5] = ya[5];
  }

  template <class S>
  void integrand(double, const S* y, const S* p, S* g) const {
    const S T = p[kTEnd] - t0;
    const S& D = p[kD];
    S lam, z3;
    physical(y, lam, z3);
    const PathTerms<S> q(y[0], lam, p[kEps], D, lambda_max);
    if (form == MForm::quadratic) {
      g[0] = (y[1] * y[1] / (4.0 * D) + q.vs) * T;
    } else {
      // Onsager-Machlup form; equal to the quadratic one up to the boundary
      // term, without its cancellation
      const S f = q.s * q.s - 1.0;
      const S v = y[1] - f;
      g[0] = (v * v / (4.0 * D) + q.s) * T;
    }
    g[1] = y[1] * y[1] + 4.0 * D * q.vs +
           T * (2.0 * y[1] * y[4] + 2.0 * q.h2 * y[3] + 4.0 * D * q.vs_l * z3);
  }

  template <class S>
  void integral_residual(const S* I, const S* p, S* r) const {
    const S& D = p[kD];
    const S lam0 = ramp_lambda(S(t0), p[kEps], lambda_max);
    const S lamT = ramp_lambda(p[kTEnd], p[kEps], lambda_max);
    const S boundary = (potential_value(p[kX0], lam0) - potential_value(p[kXT], lamT)) / (2.0 * D);
    if (form == MForm::quadratic)
      r[0] = boundary - I[0] - p[kM];
    else
      r[0] = -I[0] - p[kM];
    r[1] = 2.0 * potential_rate(p[kXT], lamT, p[kEps], lambda_max) + I[1] - p[km];
  }
};

/// A converged (or seed) path: collocation solution plus model context.
struct PathSolution {
  colloc::Solution sol;
  ModelParams params;  // lambda_max, t0 and the base values; epsilon, D, x0, xT mirror sol.p
  MForm form = MForm::quadratic;
  double residual = 0.0;
  int newton_iterations = 0;

  double T_end() const { return sol.p[kTEnd]; }
  double T_init() const { return sol.p[kTInit]; }
  double M() const { return sol.p[kM]; }
  double m() const { return sol.p[km]; }
  double x_T() const { return sol.p[kXT]; }
  double epsilon() const { return sol.p[kEps]; }
  double D() const { return sol.p[kD]; }
  const colloc::Mesh& mesh() const { return sol.mesh; }

  double t_of(double tau) const { return params.t0 + tau * (T_end() - params.t0); }
  double tau_of(double t) const { return (t - params.t0) / (T_end() - params.t0); }

  /// Solver slots mapped to (x1, x2, lam, z1, z2, z3).
  std::array<double, 6> physical(const double* y) const {
    std::array<double, 6> out{y[0], y[1], 0.0, y[3], y[4], 0.0};
    problem().physical(y, out[2], out[5]);
    return out;
  }
  std::array<double, 6> state(double tau) const {
    double y[6];
    for (int r = 0; r < 6; ++r) y[r] = sol.eval(tau, r);
    return physical(y);
  }
  double value(double tau, int r) const { return state(tau)[r]; }
  /// State component r (0..5 = x1, x2, lam, z1, z2, z3) at physical time t.
  double at_time(double t, int r) const { return value(tau_of(t), r); }

  /// Component r at every mesh node.
  std::vector<double> component(int r) const {
    std::vector<double> v;
    for (int i = 0; i <= sol.mesh.n_intervals(); ++i)
      v.push_back(physical(&sol.y[static_cast<std::size_t>(i) * colloc::kDegree * 6])[r]);
    return v;
  }

  /// Model parameters with epsilon, D, x0, xT taken from the solution.
  ModelParams model() const {
    ModelParams p = params;
    p.ramp.epsilon = epsilon();
    p.D = D();
    p.x0 = sol.p[kX0];
    p.xT = x_T();
    return p;
  }

  PathProblem problem() const { return {params.ramp.lambda_max, params.t0, form}; }
};

/// Right-hand side of the six ODEs at tau for explicit parameters.
inline std::array<double, 6> rhs_extended(const std::array<double, 6>& state, double /*tau*/,
                                          double T_end, double T_init, const ModelParams& params) {
  const double T = T_end - params.t0;
  const auto& y = state;
  const PathTerms<double> q(y[0], y[2], params.ramp.epsilon, params.D, params.ramp.lambda_max);
  return {y[1] * T,
          q.h2 * T * T_init,
          q.h3 * T,
          y[1] + y[4] * T,
          T_init * (q.h2 + (q.h2_x * y[3] + q.h2_l * y[5]) * T),
          q.h3 + q.h3_l * y[5] * T};
}

namespace detail {

inline PathTerms<double> terms_at(const PathSolution& path, const std::array<double, 6>& y) {
  return {y[0], y[2], path.epsilon(), path.D(), path.params.ramp.lambda_max};
}

/// Integral over tau of fn(physical state) by Gauss quadrature.
template <class Fn>
double integrate_path(const PathSolution& path, Fn&& fn, int n_gauss) {
  return colloc::integrate(
      path.sol, [&](double, const double* raw) { return fn(path.physical(raw)); }, n_gauss);
}

inline double boundary_term(const PathSolution& path) {
  const double lm = path.params.ramp.lambda_max;
  const double lam0 = ramp_lambda(path.params.t0, path.epsilon(), lm);
  const double lamT = ramp_lambda(path.T_end(), path.epsilon(), lm);
  return (potential_value(path.sol.p[kX0], lam0) - potential_value(path.x_T(), lamT)) / (2.0 * path.D());
}

}  // namespace detail

/// M with the quadratic kinetic term x2^2 / 4D, by 8-point Gauss quadrature
/// on each interval.
inline double functional_M(const PathSolution& path, int n_gauss = 8) {
  const double T = path.T_end() - path.params.t0;
  const double D = path.D();
  const double I = detail::integrate_path(
      path,
      [&](const std::array<double, 6>& y) {
        const auto q = detail::terms_at(path, y);
        return (y[1] * y[1] / (4.0 * D) + q.vs) * T;
      },
      n_gauss);
  return detail::boundary_term(path) - I;
}

/// M with a linear x2 / 4D kinetic term (exposed for
/// comparison; not a stationary functional of the path).
inline double functional_M_linear_kinetic(const PathSolution& path, int n_gauss = 8) {
  const double T = path.T_end() - path.params.t0;
  const double D = path.D();
  const double I = detail::integrate_path(
      path,
      [&](const std::array<double, 6>& y) {
        const auto q = detail::terms_at(path, y);
        return (y[1] / (4.0 * D) + q.vs) * T;
      },
      n_gauss);
  return detail::boundary_term(path) - I;
}

/// Onsager-Machlup form -int [(x2 - f)^2 / 4D + f_x / 2] dt; equals
/// functional_M for an exact solution of the boundary conditions.
inline double functional_M_om(const PathSolution& path, int n_gauss = 8) {
  const double T = path.T_end() - path.params.t0;
  const double D = path.D();
  return -detail::integrate_path(
      path,
      [&](const std::array<double, 6>& y) {
        const double s = y[0] + y[2];
        const double v = y[1] - (s * s - 1.0);
        return (v * v / (4.0 * D) + s) * T;
      },
      n_gauss);
}

/// m = -4D dM/dT_end through the variational components.
inline double functional_m(const PathSolution& path, int n_gauss = 8) {
  const double T = path.T_end() - path.params.t0;
  const double D = path.D();
  const double lm = path.params.ramp.lambda_max;
  const double I = detail::integrate_path(
      path,
      [&](const std::array<double, 6>& y) {
        const auto q = detail::terms_at(path, y);
        return y[1] * y[1] + 4.0 * D * q.vs +
               T * (2.0 * y[1] * y[4] + 2.0 * q.h2 * y[3] + 4.0 * D * q.vs_l * y[5]);
      },
      n_gauss);
  const double lamT = ramp_lambda(path.T_end(), path.epsilon(), lm);
  return 2.0 * potential_rate(path.x_T(), lamT, path.epsilon(), lm) + I;
}

/// The short m integrand (z2 + 2 h2 z1 + Vs_lam z3) T
/// + 2 U_t + x2 + 4D Vs.
inline double functional_m_short(const PathSolution& path, int n_gauss = 8) {
  const double T = path.T_end() - path.params.t0;
  const double D = path.D();
  const double lm = path.params.ramp.lambda_max;
  const double lamT = ramp_lambda(path.T_end(), path.epsilon(), lm);
  const double ut = potential_rate(path.x_T(), lamT, path.epsilon(), lm);
  return detail::integrate_path(
      path,
      [&](const std::array<double, 6>& y) {
        const auto q = detail::terms_at(path, y);
        return (y[4] + 2.0 * q.h2 * y[3] + q.vs_l * y[5]) * T + 2.0 * ut + y[1] + 4.0 * D * q.vs;
      },
      n_gauss);
}

/// dM/dT_end from the end-point (Hamilton-Jacobi) formula
/// (x'^2 - f^2) / 4D - f_x / 2 at t = T_end; valid on Euler-Lagrange
/// solutions (T_init = 1).
inline double dM_dTend_endpoint(const PathSolution& path) {
  const double xd = path.sol.eval(1.0, 1);
  const double s = path.x_T() + path.value(1.0, 2);
  const double f = s * s - 1.0;
  return (xd * xd - f * f) / (4.0 * path.D()) - s;
}

struct SolveOptions {
  colloc::NewtonOptions newton{};
  /// Mesh re-equidistribution passes after the first convergence.
  int adapt_passes = 0;
};

/// Newton solve with the listed parameters free (count must equal 2) and
/// the remaining ones fixed at their values in the guess.
inline PathSolution solve_bvp(const PathSolution& guess, const std::vector<int>& free,
                              const SolveOptions& opt = {},
                              const colloc::Arclength* arc = nullptr) {
  PathSolution out = guess;
  const PathProblem prob = guess.problem();
  auto rep = colloc::solve(prob, out.sol, free, opt.newton, arc);
  for (int pass = 0; pass < opt.adapt_passes; ++pass) {
    PathSolution trial = out;
    trial.sol = colloc::remesh(out.sol, colloc::adapted_mesh(out.sol, out.sol.mesh.n_intervals()));
    rep = colloc::solve(prob, trial.sol, free, opt.newton, arc);
    out = std::move(trial);
  }
  out.residual = rep.residual;
  out.newton_iterations = rep.iterations;
  return out;
}

/// Max |x1'' - 2D dVs/dx| (in physical time) at interval midpoints.
inline double euler_lagrange_residual(const PathSolution& path) {
  const double T = path.T_end() - path.params.t0;
  const auto& m = path.sol.mesh;
  double worst = 0.0;
  for (int i = 0; i < m.n_intervals(); ++i) {
    const double tau = m.nodes[i] + 0.5 * m.h(i);
    const double x2d = path.sol.eval_d(tau, 1) / T;  // d x2 / dt
    const auto y = path.state(tau);
    const auto q = detail::terms_at(path, y);
    worst = std::max(worst, std::abs(x2d - path.T_init() * q.h2));
  }
  return worst;
}

/// Trivial Step-1 seed: T_init = 0, x_T = x0, constant x1, the exact ramp
/// and z3 = tau * lambda'(t).
inline PathSolution trivial_seed(const ModelParams& params, double T_end = -9.0,
                                 int n_intervals = 200, MForm form = MForm::quadratic) {
  PathSolution s;
  s.params = params;
  s.form = form;
  s.sol.mesh = colloc::Mesh::uniform(n_intervals);
  s.sol.n = 6;
  s.sol.y.assign(static_cast<std::size_t>(s.sol.mesh.n_points()) * 6, 0.0);
  s.sol.p.assign(kPathParams, 0.0);
  s.sol.p[kTEnd] = T_end;
  s.sol.p[kTInit] = 0.0;
  s.sol.p[kXT] = params.x0;
  s.sol.p[kEps] = params.ramp.epsilon;
  s.sol.p[kD] = params.D;
  s.sol.p[kX0] = params.x0;
  const double T = T_end - params.t0;
  for (int k = 0; k < s.sol.mesh.n_points(); ++k) {
    const double tau = s.sol.mesh.point(k);
    const double t = params.t0 + tau * T;
    s.sol.at(k, 0) = params.x0;
    s.sol.at(k, 2) = params.ramp.lambda_max * params.ramp.epsilon * t;
    s.sol.at(k, 5) = params.ramp.lambda_max * params.ramp.epsilon * tau;
  }
  return s;
}

}  // namespace ratetip
