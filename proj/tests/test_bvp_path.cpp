#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ratetip/continuation.hpp"

using namespace ratetip;
using Catch::Approx;

namespace {

ModelParams reference() {
  ModelParams p;
  p.D = 0.05;
  return p;
}

const SeedingRuns& runs() {
  static const SeedingRuns r = [] {
    SeedingOptions so;
    so.n_intervals = 100;
    so.stop_at_first_root = true;
    return run_seeding_steps(reference(), so);
  }();
  return r;
}

const PathSolution& optimal() {
  static const PathSolution s = optimal_path_from_root(runs().step3.roots.at(0));
  return s;
}

PathSolution at_T_end(const PathSolution& base, double T_end) {
  PathSolution q = base;
  q.sol.p[kTEnd] = T_end;
  return solve_bvp(q, {kM, km});
}

}  // namespace

TEST_CASE("model terms") {
  const PathTerms<double> q(-0.5, 1.0, 1.25, 0.05, 3.0);
  const double h = 1e-6;
  const PathTerms<double> qp(-0.5 + h, 1.0, 1.25, 0.05, 3.0), qm(-0.5 - h, 1.0, 1.25, 0.05, 3.0);
  CHECK(q.h2_x == Approx((qp.h2 - qm.h2) / (2 * h)).margin(1e-6));
  // h2 = 2D dVs/dx
  CHECK(q.h2 == Approx(2 * 0.05 * (qp.vs - qm.vs) / (2 * h)).margin(1e-6));
  const PathTerms<double> lp(-0.5, 1.0 + h, 1.25, 0.05, 3.0), lm(-0.5, 1.0 - h, 1.25, 0.05, 3.0);
  CHECK(q.h2_l == Approx((lp.h2 - lm.h2) / (2 * h)).margin(1e-6));
  CHECK(q.vs_l == Approx((lp.vs - lm.vs) / (2 * h)).margin(1e-5));
  CHECK(q.h3_l == Approx((lp.h3 - lm.h3) / (2 * h)).margin(1e-8));
}

TEST_CASE("T_init = 0 gives a trivial system") {
  const auto seed = trivial_seed(reference());
  const PathProblem prob = seed.problem();
  double y[6] = {-0.7, 0.3, 0.1, 0.2, -0.4, 0.5}, f[6];
  prob.rhs(0.3, y, seed.sol.p.data(), f);
  CHECK(f[1] == 0.0);
  CHECK(f[4] == 0.0);
  const auto s = solve_bvp(seed, {kM, km});
  CHECK(s.newton_iterations <= 3);
  CHECK(s.residual < 1e-10);
  for (double x : s.component(0)) CHECK(x == Approx(-1.0).margin(1e-12));
}

TEST_CASE("resting path at a frozen ramp") {
  // epsilon = 0 freezes lambda at lambda_max / 2; at the well bottom Vs = -1
  ModelParams p = reference();
  p.ramp.epsilon = 0.0;
  p.x0 = -2.5;
  const auto s = trivial_seed(p, -9.0, 20);
  CHECK(functional_M(s) == Approx(1.0).epsilon(1e-12));
  CHECK(functional_M(trivial_seed(p, -4.0, 20)) == Approx(6.0).epsilon(1e-12));
}

TEST_CASE("seeding steps") {
  const auto& r = runs();
  CHECK(r.step1.last.T_init() == 1.0);
  CHECK(r.step2.last.x_T() == 4.0);
  // Step 2: x2(0) grows as the end point moves out
  double prev = -1e300;
  for (const auto& s : r.step2.solutions) {
    const double v = s.sol.eval(0.0, 1);
    CHECK(v >= prev - 1e-9);
    prev = v;
  }
  REQUIRE(r.step3.roots.size() == 1);
}

TEST_CASE("the optimal path at the reference point") {
  const auto& s = optimal();
  CHECK(s.T_end() == Approx(1.43).margin(0.05));
  CHECK(std::abs(s.m()) < 1e-8);
  CHECK(std::abs(runs().step3.roots[0].m()) < 1e-8);
  CHECK(s.residual < 1e-9);
  CHECK(euler_lagrange_residual(s) < 1e-3);
  // lambda follows the ramp
  for (double tau : {0.0, 0.2, 0.5, 0.77, 1.0}) {
    const double t = s.t_of(tau);
    CHECK(s.value(tau, 2) == Approx(lambda_of_t(t, RampParams{1.25, 3.0})).margin(1e-9));
  }
  CHECK(s.at_time(-10.0, 0) == Approx(-1.0).margin(1e-12));
  CHECK(s.at_time(s.T_end(), 0) == Approx(4.0).margin(1e-12));
}

TEST_CASE("integral conditions match direct quadrature") {
  const auto& s = optimal();
  CHECK(functional_M(s) == Approx(s.M()).margin(1e-8));
  CHECK(functional_m(s) == Approx(s.m()).margin(1e-8));
  CHECK(std::abs(functional_M(s, 8) - functional_M(s, 4)) < 1e-8);
  CHECK(functional_M_om(s) == Approx(functional_M(s)).margin(1e-6));
  // the linear-kinetic M and the short m are not T_end derivatives
  CHECK(std::abs(functional_m_short(s)) > 1e-3);
  CHECK(std::abs(functional_M_linear_kinetic(s) - s.M()) > 1e-3);
}

TEST_CASE("z components are T_end derivatives") {
  const auto base = at_T_end(optimal(), optimal().T_end());
  const double d = 1e-4;
  const auto hi = at_T_end(base, base.T_end() + d);
  const auto lo = at_T_end(base, base.T_end() - d);
  for (int k = 0; k <= 50; ++k) {
    const double tau = k / 50.0;
    const auto z = base.state(tau);
    const auto a = hi.state(tau), b = lo.state(tau);
    for (int r = 0; r < 3; ++r) {
      const double fd = (a[r] - b[r]) / (2 * d);
      CHECK(z[3 + r] == Approx(fd).margin(1e-4 * std::max(1.0, std::abs(fd))));
    }
  }
}

TEST_CASE("m = -4D dM/dT_end, zero at the optimum") {
  const auto& s = optimal();
  const double d = 1e-3;
  const auto hi = at_T_end(s, s.T_end() + d), lo = at_T_end(s, s.T_end() - d);
  CHECK(std::abs((hi.M() - lo.M()) / (2 * d)) < 1e-4);
  CHECK(hi.M() < s.M());
  CHECK(lo.M() < s.M());
  // away from the root
  const auto far = at_T_end(s, 2.0);
  const auto fh = at_T_end(far, 2.0 + d), fl = at_T_end(far, 2.0 - d);
  const double dM = (fh.M() - fl.M()) / (2 * d);
  CHECK(far.m() == Approx(-4 * far.D() * dM).epsilon(1e-4));
  CHECK(dM_dTend_endpoint(far) == Approx(dM).epsilon(1e-3));
}

TEST_CASE("m changes sign across the optimum") {
  const auto& s = optimal();
  const auto a = at_T_end(s, 1.0), b = at_T_end(s, 2.0);
  CHECK(a.m() * b.m() < 0.0);
  CHECK(a.m() < 0.0);
}

TEST_CASE("doubling the mesh barely moves T_end") {
  const auto& s = optimal();
  PathSolution fine = s;
  fine.sol = colloc::remesh(s.sol, colloc::adapted_mesh(s.sol, 2 * s.mesh().n_intervals()));
  fine = solve_bvp(fine, {kM, kTEnd});
  CHECK(std::abs(fine.T_end() - s.T_end()) < 1e-6);
  CHECK(std::abs(fine.M() - s.M()) < 1e-6);
  // interpolation error between collocation points: fourth order
  CHECK(euler_lagrange_residual(fine) < euler_lagrange_residual(s) / 8.0);
}

TEST_CASE("extended right-hand side in physical variables") {
  const auto& s = optimal();
  // a Gauss point, where the collocation equations hold
  const int i = s.mesh().n_intervals() * 3 / 5;
  const double tau = s.mesh().nodes[i] + s.mesh().h(i) * colloc::detail::tables().xi[1];
  const auto y = s.state(tau);
  const auto f = rhs_extended(y, tau, s.T_end(), 1.0, s.model());
  const double T = s.T_end() - s.params.t0;
  // derivatives of the interpolant in tau
  CHECK(f[0] == Approx(s.sol.eval_d(tau, 0)).epsilon(1e-8));
  CHECK(f[1] == Approx(s.sol.eval_d(tau, 1)).epsilon(1e-8));
  const double h = 1e-5;
  CHECK(f[2] == Approx((s.value(tau + h, 2) - s.value(tau - h, 2)) / (2 * h)).epsilon(1e-6));
  CHECK(f[5] == Approx((s.value(tau + h, 5) - s.value(tau - h, 5)) / (2 * h)).epsilon(1e-5));
  CHECK(f[2] == Approx(lambda_dot(s.t_of(tau), RampParams{1.25, 3.0}) * T).epsilon(1e-9));
}

TEST_CASE("parameter names") {
  CHECK(param_index("T_end") == kTEnd);
  CHECK(param_name(kD) == "D");
  CHECK_THROWS_AS(param_index("nope"), InvalidArgument);
}
