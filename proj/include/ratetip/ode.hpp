#pragma once

// Adaptive Dormand-Prince 5(4) integrator for scalar non-autonomous ODEs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "errors.hpp"

namespace ratetip::ode {

struct Tolerances {
  double abs = 1e-10;
  double rel = 1e-10;
  double initial_step = 1e-3;
  double max_step = 0.1;
  long max_steps = 10'000'000;
};

/// Outcome of integrating to a target time: either reached, or stopped early
/// because `stop(t, y)` returned true (state at the stopping step is kept).
struct Segment {
  double t;
  double y;
  bool stopped;
  double h_next;
};

/// Integrates y' = f(t, y) from (t, y) to t_end (either direction).  The last
/// step is clipped so the target is hit exactly.
template <class Rhs, class Stop>
Segment integrate(const Rhs& f, double t, double y, double t_end, const Tolerances& tol,
                  const Stop& stop, double h = 0.0) {
  // Dormand-Prince tableau
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  const double dir = t_end >= t ? 1.0 : -1.0;
  if (h <= 0.0) h = tol.initial_step;
  h = std::min(h, tol.max_step);
  double k1 = f(t, y);
  for (long n = 0; n < tol.max_steps; ++n) {
    const double remaining = (t_end - t) * dir;
    if (remaining <= 0.0) return {t, y, false, h};
    const bool last = h >= remaining;
    const double hs = (last ? remaining : h) * dir;
    const double k2 = f(t + c2 * hs, y + hs * a21 * k1);
    const double k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
    const double k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    const double k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const double k6 =
        f(t + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const double y_new = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double k7 = f(t + hs, y_new);
    const double err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double scale = tol.abs + tol.rel * std::max(std::abs(y), std::abs(y_new));
    const double ratio = std::abs(err) / scale;
    if (!std::isfinite(ratio)) {
      h *= 0.25;
      if (h < 1e-14) throw Error("ode: step size underflow");
      continue;
    }
    if (ratio <= 1.0) {
      t = last ? t_end : t + hs;
      y = y_new;
      k1 = k7;
      const double grow = ratio == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(ratio, -0.2));
      if (!last) h = std::min(h * grow, tol.max_step);
      if (stop(t, y)) return {t, y, true, h};
    } else {
      h *= std::max(0.1, 0.9 * std::pow(ratio, -0.25));
      if (h < 1e-14) throw Error("ode: step size underflow");
    }
  }
  throw Error("ode: maximum number of steps exceeded");
}

template <class Rhs>
double integrate(const Rhs& f, double t, double y, double t_end, const Tolerances& tol = {}) {
  return integrate(f, t, y, t_end, tol, [](double, double) { return false; }).y;
}

}  // namespace ratetip::ode
