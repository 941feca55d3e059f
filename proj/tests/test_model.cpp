#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ratetip/model.hpp"

using namespace ratetip;
using Catch::Approx;

namespace {

// Expanded polynomial form of V_s, written out term by term.
double v_s_expanded(double x, double lam, double eps, double lmax, double D) {
  const double l2 = lam * lam;
  const double num = std::pow(x, 4) + 4 * l2 * x * x + (1 - l2) * (1 - l2) + 4 * lam * std::pow(x, 3) -
                     2 * x * (x + 2 * lam) * (1 - l2);
  return num / (4 * D) + x + lam + eps * lam * x * (lmax - lam) * (x + 2 * lam) / (2 * D);
}

ModelParams at_eps(double eps) {
  ModelParams p;
  p.ramp.epsilon = eps;
  return p;
}

}  // namespace

TEST_CASE("ramp values") {
  RampParams r{1.0, 3.0};
  CHECK(lambda_of_t(0.0, r) == Approx(1.5).margin(1e-15));
  CHECK(lambda_of_t(40.0, r) == Approx(3.0).margin(1e-12));
  CHECK(lambda_of_t(1.0, r) == Approx(2.8577223804673).margin(1e-12));
  RampParams r125{1.25, 3.0};
  CHECK(lambda_dot(0.0, r125) == Approx(2.8125).margin(1e-14));
  CHECK(std::abs(lambda_dot(60.0, r125)) < 1e-30);
  CHECK(h3(1.5, r125) == Approx(2.8125).margin(1e-14));
  CHECK(h3(0.0, r125) == 0.0);
  CHECK(h3(3.0, r125) == 0.0);
}

TEST_CASE("lambda_dot equals eps*lambda*(lmax - lambda)") {
  RampParams r{1.25, 3.0};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 100; ++i) {
    const double t = u(rng);
    const double l = lambda_of_t(t, r);
    CHECK(std::abs(lambda_dot(t, r) - h3(l, r)) < 1e-12);
  }
  const double l = lambda_of_t(0.7, r);
  CHECK(lambda_dot(0.7, r) == Approx(1.25 * l * (3.0 - l)).epsilon(1e-13));
}

TEST_CASE("drift and potential identities") {
  CHECK(drift(-1.0, 0.0) == 0.0);
  CHECK(drift(1.0, 0.0) == 0.0);
  CHECK(drift(0.0, 0.0) == -1.0);
  RampParams r{1.25, 3.0};
  auto pt = potential_at(-1.0, 0.0, r);
  CHECK(pt.U_x == Approx(0.0).margin(1e-15));
  CHECK(pt.U_xx == Approx(2.0));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-5.0, 3.0), ul(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const double x = ux(rng), lam = ul(rng);
    CHECK(potential_at(x, lam, r).U_x == Approx(-drift(x, lam)).margin(1e-12));
    // point reflection R about (-1.5, 1.5) reverses the (x, lambda) field:
    // F(R p) = -R F(p), i.e. the x-component is even under R
    CHECK(-drift(x, lam) == Approx(-drift(-3.0 - x, 3.0 - lam)).margin(1e-12));
    CHECK(-h3(lam, r) == Approx(-h3(3.0 - lam, r)).margin(1e-12));
  }
  CHECK(potential_at(0.3, 1.1, r).U_x == Approx(-drift(0.3, 1.1)).margin(1e-15));
}

TEST_CASE("U_t matches a central difference in time") {
  const auto p = at_eps(1.25);
  const double h = 1e-5;
  const double fd = (potential_terms(-1.2, h, p).U - potential_terms(-1.2, -h, p).U) / (2 * h);
  CHECK(std::abs(potential_terms(-1.2, 0.0, p).U_t - fd) < 1e-8);
}

TEST_CASE("V_s forms agree") {
  ModelParams p = at_eps(1.25);
  p.D = 0.05;
  // well bottom, stationary ramp
  CHECK(v_s_at(-1.0, 0.0, p.ramp, p.D) == Approx(-1.0).margin(1e-14));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-5.0, 3.0), ul(0.0, 3.0), ud(0.001, 0.2);
  for (int i = 0; i < 100; ++i) {
    const double x = ux(rng), lam = ul(rng), D = ud(rng);
    const double a = v_s_at(x, lam, p.ramp, D);
    const double b = v_s_expanded(x, lam, 1.25, 3.0, D);
    CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(b)));
    // from U directly
    const auto pt = potential_at(x, lam, p.ramp);
    const double c = pt.U_x * pt.U_x / (4 * D) - pt.U_xx / 2 - pt.U_t / (2 * D);
    CHECK(std::abs(a - c) <= 1e-10 * std::max(1.0, std::abs(c)));
  }
  const double lam0 = lambda_of_t(0.0, p.ramp);
  CHECK(v_s(0.5, 0.0, p) == Approx(v_s_expanded(0.5, lam0, 1.25, 3.0, 0.05)).epsilon(1e-12));
  // (U_x)^2 / 4D doubles when D halves (eps = 0 component)
  RampParams still{1e-300, 3.0};
  const double ux2 = std::pow(potential_at(0.4, 0.7, still).U_x, 2);
  const double k1 = v_s_at(0.4, 0.7, still, 0.02) - (0.4 + 0.7);
  const double k2 = v_s_at(0.4, 0.7, still, 0.01) - (0.4 + 0.7);
  CHECK(k1 == Approx(ux2 / 0.08));
  CHECK(k2 == Approx(2.0 * k1));
}

TEST_CASE("h2 and its partials match finite differences") {
  ModelParams p = at_eps(1.25);
  p.D = 0.05;
  const double t = 0.4, x = -0.8, h = 1e-5;
  const double fd = 2 * p.D * (v_s(x + h, t, p) - v_s(x - h, t, p)) / (2 * h);
  CHECK(std::abs(h2(x, t, p) - fd) < 1e-7);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-5.0, 3.0), ul(0.0, 3.0);
  const auto& r = p.ramp;
  for (int i = 0; i < 100; ++i) {
    const double xx = ux(rng), lam = ul(rng);
    const double g = 2 * p.D * (v_s_at(xx + h, lam, r, p.D) - v_s_at(xx - h, lam, r, p.D)) / (2 * h);
    CHECK(std::abs(h2_at(xx, lam, r, p.D) - g) < 1e-6 * std::max(1.0, std::abs(g)));
    const double hx = (h2_at(xx + h, lam, r, p.D) - h2_at(xx - h, lam, r, p.D)) / (2 * h);
    const double hl = (h2_at(xx, lam + h, r, p.D) - h2_at(xx, lam - h, r, p.D)) / (2 * h);
    CHECK(std::abs(dh2_dx_at(xx, lam, r) - hx) < 1e-6 * std::max(1.0, std::abs(hx)));
    CHECK(std::abs(dh2_dlam_at(xx, lam, r) - hl) < 1e-6 * std::max(1.0, std::abs(hl)));
    const double vl = (v_s_at(xx, lam + h, r, p.D) - v_s_at(xx, lam - h, r, p.D)) / (2 * h);
    CHECK(std::abs(dv_s_dlam_at(xx, lam, r, p.D) - vl) < 1e-6 * std::max(1.0, std::abs(vl)));
  }
  const double hx = (h2_at(-0.5 + h, 1.0, r, p.D) - h2_at(-0.5 - h, 1.0, r, p.D)) / (2 * h);
  CHECK(std::abs(dh2_dx_at(-0.5, 1.0, r) - hx) < 1e-6);
}

TEST_CASE("h2 at a stationary minimum and reflection symmetry") {
  RampParams still{1e-300, 3.0};
  CHECK(h2_at(-1.0, 0.0, still, 0.03) == Approx(0.06).margin(1e-14));
  // with the ramp: (x, lambda) -> (-3 - x, 3 - lambda) flips s and keeps
  // h3, so h2 - 2D is odd
  RampParams r{1.25, 3.0};
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ux(-4.0, 1.0), ul(0.0, 3.0);
  for (int i = 0; i < 5; ++i) {
    const double x = ux(rng), lam = ul(rng), D = 0.05;
    CHECK(h2_at(x, lam, r, D) - 2 * D ==
          Approx(-(h2_at(-3.0 - x, 3.0 - lam, r, D) - 2 * D)).margin(1e-11));
  }
}

TEST_CASE("equilibria are zeros of the drift") {
  const auto e = equilibria(RampParams{1.25, 3.0});
  for (const auto& q : {e.s_minus, e.u_minus, e.s_plus, e.u_plus}) CHECK(std::abs(drift(q.x, q.lam)) < 1e-12);
  CHECK(e.s_minus.lam == 0.0);
  CHECK(e.u_minus.lam == 0.0);
  CHECK(e.s_plus.lam == 3.0);
  CHECK(e.u_plus.lam == 3.0);
}

TEST_CASE("deterministic trajectories") {
  const auto tr = deterministic_trajectory(-1.0, -10.0, 10.0, at_eps(1.25));
  CHECK(tr.times.size() == 2001);
  CHECK(tr.states.back() == Approx(-4.0).margin(1e-3));
  for (std::size_t i = 1; i < tr.times.size(); ++i) REQUIRE(tr.times[i] > tr.times[i - 1]);

  CHECK_THROWS_AS(deterministic_trajectory(-1.0, -10.0, 10.0, at_eps(1.4)), DivergedBeforeFinalTime);
  try {
    deterministic_trajectory(-1.0, -10.0, 10.0, at_eps(1.4));
  } catch (const DivergedBeforeFinalTime& e) {
    CHECK(e.t_blowup > -1.0);
    CHECK(e.t_blowup < 10.0);
  }
  CHECK_THROWS_AS(deterministic_trajectory(-1.0, 1.0, 1.0, at_eps(1.25)), InvalidArgument);
}

TEST_CASE("heteroclinic line at the critical rate") {
  const auto p = at_eps(4.0 / 3.0);
  const auto tr = deterministic_trajectory(-1.0, -10.0, 10.0, p);
  const auto ws = stable_manifold_ws_uplus(p);
  double worst = 0.0, worst_s = 0.0;
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const double lam = lambda_of_t(tr.times[i], p.ramp);
    if (lam < 0.1 || lam > 2.9) continue;
    worst = std::max(worst, std::abs(tr.states[i] + lam / 3 + 1));
    worst_s = std::max(worst_s, std::abs(ws.at(tr.times[i]) + lam / 3 + 1));
  }
  CHECK(worst < 1e-3);
  CHECK(worst_s < 1e-3);
}

TEST_CASE("stable manifold of U+") {
  const auto p = at_eps(1.25);
  const auto ws = stable_manifold_ws_uplus(p);
  CHECK(ws.kind == TrajectoryKind::stable_manifold_WsUplus);
  CHECK(ws.times.front() == Approx(-10.0));
  CHECK(std::abs(ws.states.back() - (-2.0)) < 1e-4);
  const auto wu = unstable_manifold_wu_sminus(p);
  double best = 1e9, t_best = 0;
  for (std::size_t i = 0; i < wu.times.size(); ++i) {
    const double gap = std::abs(ws.at(wu.times[i]) - wu.states[i]);
    if (gap < best) best = gap, t_best = wu.times[i];
  }
  CHECK(std::abs(t_best) <= 0.05);
}

TEST_CASE("critical rate") {
  CHECK_FALSE(tips(1.2, 3.0));
  CHECK(tips(1.45, 3.0));
  const double ec = find_critical_epsilon(3.0, 1e-4);
  CHECK(std::abs(ec - 4.0 / 3.0) < 1e-4);
  CHECK_THROWS_AS(find_critical_epsilon(3.0, 1e-4, 1.4, 1.5), BracketInvalid);
  ode::Tolerances tight;
  tight.abs = tight.rel = 5e-11;
  const double ec2 = find_critical_epsilon_traced(3.0, 1e-4, 1.0, 1.6, tight).epsilon_c;
  CHECK(std::abs(ec2 - ec) <= 2e-4);
}
