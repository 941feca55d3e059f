// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,4,6] [--jobs N] [--suite PATH]... [--cli PATH]

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ratetip/ratetip.hpp"

using namespace ratetip;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << " [failed: " << what << "]";
    }
  }
};

std::string num(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// Shared state so later criteria reuse earlier runs.
struct Shared {
  std::optional<SeedingRuns> runs;  // Steps 1-3 at the reference point, full T_end range
  std::optional<PathSolution> root;
};

Shared g;

void c1(Outcome& o) {
  const double e = find_critical_epsilon(3.0, 1e-4);
  o.note << "epsilon_c = " << num(e, 10) << ", |error| = " << num(std::abs(e - 4.0 / 3.0), 3);
  o.check(std::abs(e - 4.0 / 3.0) <= 1e-4, "epsilon_c within 1e-4 of 4/3");
}

void c2(Outcome& o) {
  ModelParams p;
  p.ramp.epsilon = 4.0 / 3.0;
  const auto tr = deterministic_trajectory(-1.0, -10.0, 10.0, p);
  double worst = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const double lam = lambda_at(tr.times[k], p);
    if (lam < 0.1 || lam > 2.9) continue;
    worst = std::max(worst, std::abs(tr.states[k] + lam / 3.0 + 1.0));
    ++n;
  }
  o.note << "max |x + lambda/3 + 1| = " << num(worst, 3) << " over " << n << " samples";
  o.check(n > 0 && worst < 1e-3, "line within 1e-3");
}

void c3(Outcome& o) {
  const auto s = lag1_series(ModelParams{}, {-10.0, -3.0});
  const double a = s.autocorrelation.back(), V = s.variance.back();
  o.note << "t = " << num(s.times.back()) << ": a = " << num(a, 5) << ", V = " << num(V, 5);
  o.check(std::abs(s.times.back() + 3.0) < 1e-9, "series ends at t = -3");
  o.check(std::abs(a - 0.98) <= 0.005, "a = 0.98 +- 0.005");
  o.check(std::abs(V - 0.004) <= 0.1 * 0.004, "V = 0.004 +- 10%");
}

void c4(Outcome& o, unsigned jobs) {
  const ModelParams p;
  const auto ev = evolve_from_stationary(p, 10.0);
  const double fpe = 1.0 - ev.densities.back().mass;
  EnsembleConfig e;
  e.n_paths = 100000;
  e.seed = 2024;
  e.jobs = jobs;
  const auto r = run_ensemble(e, p, {p.t0, 10.0});
  const double mc = r.escape_fraction, se = r.escape_fraction_se();
  o.note << "FPE " << num(fpe, 5) << ", MC " << num(mc, 5) << " +- " << num(se, 2) << " (1e5 paths), gap "
         << num(std::abs(fpe - mc) / se, 3) << " SE";
  o.check(std::abs(fpe - 0.36) <= 0.03, "FPE 0.36 +- 0.03");
  o.check(std::abs(mc - 0.36) <= 0.03, "MC 0.36 +- 0.03");
  o.check(std::abs(fpe - mc) <= 2.0 * se, "within 2 SE");
}

void c5(Outcome& o) {
  ModelParams p;
  const auto sw = threshold_sweep({1.5}, p, 4.0);
  std::size_t best = 0;
  for (std::size_t n = 0; n < sw.times.size(); ++n)
    if (sw.rate[n][0] > sw.rate[best][0]) best = n;
  const double peak = sw.times[best];
  const auto path = seed_optimal_path(p);
  const double t_path = crossing_time(path, make_threshold_curve(p, 1.5));
  o.note << "rate peak t = " << num(peak, 4) << ", optimal path crosses y = 1.5 at t = " << num(t_path, 4);
  o.check(std::abs(peak - 1.5) <= 0.2, "peak at 1.5 +- 0.2");
  o.check(std::abs(t_path - peak) <= 0.2, "path crossing within 0.2 of the peak");
}

const SeedingRuns& reference_runs() {
  if (!g.runs) {
    ModelParams p;
    p.D = 0.05;
    g.runs = run_seeding_steps(p);
    if (!g.runs->step3.roots.empty()) g.root = g.runs->step3.roots.front();
  }
  return *g.runs;
}

void c6(Outcome& o) {
  const auto& r = reference_runs();
  o.note << "m sign changes: " << r.step3.brackets.size();
  o.check(r.step3.roots.size() == 1, "exactly one m-root on T_end in [-9, 20]");
  if (r.step3.roots.empty()) return;
  const auto& s = r.step3.roots.front();
  o.note << ", root T_end = " << num(s.T_end(), 8) << ", |m| = " << num(std::abs(s.m()), 3);
  o.check(std::abs(s.T_end() - 1.43) <= 0.05, "T_end 1.43 +- 0.05");
  o.check(std::abs(s.m()) < 1e-8, "|m| < 1e-8");
}

PathSolution at_T_end(const PathSolution& base, double T_end) {
  PathSolution q = base;
  q.sol.p[kTEnd] = T_end;
  return solve_bvp(q, {kM, km});
}

void c7(Outcome& o) {
  reference_runs();
  if (!g.root) {
    o.check(false, "no m-root from criterion 6");
    return;
  }
  const auto base = at_T_end(*g.root, g.root->T_end());
  const double d = 1e-4;
  const auto hi = at_T_end(base, base.T_end() + d), lo = at_T_end(base, base.T_end() - d);
  double worst = 0.0;
  for (int k = 0; k <= 200; ++k) {
    const double tau = k / 200.0;
    const auto z = base.state(tau);
    const auto a = hi.state(tau), b = lo.state(tau);
    for (int r = 0; r < 3; ++r) {
      const double fd = (a[r] - b[r]) / (2 * d);
      worst = std::max(worst, std::abs(z[3 + r] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  const double dd = 1e-3;
  const double dM = (at_T_end(base, base.T_end() + dd).M() - at_T_end(base, base.T_end() - dd).M()) / (2 * dd);
  o.note << "max z vs FD mismatch " << num(worst, 3) << ", dM/dT_end at the root " << num(dM, 3);
  o.check(worst <= 1e-4, "z within 1e-4 of finite differences");
  o.check(std::abs(dM) <= 1e-4, "dM/dT_end = 0 +- 1e-4");
}

std::optional<SweepGrid> g_sweep;

void c8(Outcome& o, unsigned jobs) {
  SweepOptions so;
  so.jobs = static_cast<int>(jobs);
  g_sweep = sweep_epsilon_D(default_epsilon_axis(), default_D_axis(), ModelParams{}, so);
  const auto& sw = *g_sweep;
  int failed = 0;
  for (const auto& c : sw.cells) failed += c.converged ? 0 : 1;
  o.note << sw.epsilon_values.size() << "x" << sw.D_values.size() << " grid, " << failed << " failed cells";
  o.check(failed == 0, "every cell converged");
  double min_r2 = 1.0, tc_lo = 1e300, tc_hi = -1e300;
  bool t_mono = true, m_mono = true;
  for (std::size_t i = 0; i < sw.epsilon_values.size(); ++i) {
    std::vector<double> x, y;
    for (std::size_t j = 0; j < sw.D_values.size(); ++j) {
      const auto& c = sw.cell(i, j);
      if (!c.converged) continue;
      x.push_back(std::log(sw.D_values[j]));
      y.push_back(c.T_end);
      if (j > 0 && sw.cell(i, j - 1).converged) {
        t_mono = t_mono && c.T_end < sw.cell(i, j - 1).T_end;
        m_mono = m_mono && c.M > sw.cell(i, j - 1).M;
      }
    }
    try {
      min_r2 = std::min(min_r2, linear_fit(x, y).r2);
    } catch (const InsufficientPoints&) {
      min_r2 = 0.0;
    }
    const double tc = sw.cell(i, 0).t_cross;
    tc_lo = std::min(tc_lo, tc);
    tc_hi = std::max(tc_hi, tc);
  }
  o.note << "; min R2(T_end vs log D) = " << num(min_r2, 5) << "; t_cross at D = 1e-3 in [" << num(tc_lo, 4)
         << ", " << num(tc_hi, 4) << "]";
  o.check(t_mono, "T_end decreasing in D");
  o.check(min_r2 > 0.98, "R2 > 0.98");
  o.check(tc_lo >= 0.3 && tc_hi <= 3.0, "t_cross in [0.3, 3] at the smallest D");
  o.check(m_mono, "M decreasing as D decreases");
}

void c9(Outcome& o) {
  if (!g_sweep) {
    o.check(false, "needs the sweep from criterion 8");
    return;
  }
  try {
    const auto fits = delay_law_fit(*g_sweep);
    double min_slope = 1e300, max_slope = -1e300, min_r2 = 1.0;
    for (const auto& f : fits) {
      min_slope = std::min(min_slope, f.fit.slope);
      max_slope = std::max(max_slope, f.fit.slope);
      min_r2 = std::min(min_r2, f.fit.r2);
    }
    o.note << fits.size() << " fits, slope in [" << num(min_slope, 4) << ", " << num(max_slope, 4)
           << "], min R2 = " << num(min_r2, 5);
    o.check(min_slope > 0.0, "positive slope");
    o.check(min_r2 > 0.95, "R2 > 0.95");
  } catch (const InsufficientPoints& e) {
    o.check(false, e.what());
  }
}

void c10(Outcome& o, unsigned jobs) {
  const auto all = domain_sweep({0.5, 1.0, 2.0}, ModelParams{}, {-10.0, 10.0}, {}, jobs);
  double lo = 1e300, hi = -1e300;
  bool all_found = true;
  o.note << "decay-rate onsets:";
  for (const auto& s : all) {
    const auto t = decay_rate_onset(s);
    all_found = all_found && t.has_value();
    if (t) {
      lo = std::min(lo, *t);
      hi = std::max(hi, *t);
    }
    o.note << " " << (t ? num(*t, 4) : std::string("none"));
  }
  const auto v = variance_onset(all[2]);
  o.note << "; variance onset (x_end = 2): " << (v ? num(*v, 4) : std::string("none"));
  o.check(all_found && hi - lo < 0.2, "decay-rate onsets within 0.2");
  o.check(!v || *v >= 0.0, "no variance onset before t = 0");
}

int run_binary(const std::string& path, const std::string& env) {
  const std::string cmd = env + "'" + path + "' >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void c11(Outcome& o, const std::vector<std::string>& suites, const std::string& cli) {
  if (suites.empty()) {
    o.check(false, "no suites given (--suite)");
    return;
  }
  const std::string env = cli.empty() ? "" : "RATETIP_CLI='" + cli + "' ";
  int bad = 0;
  for (const auto& s : suites) {
    const int rc = run_binary(s, env);
    if (rc != 0) {
      ++bad;
      o.note << " " << s.substr(s.find_last_of('/') + 1) << " exit " << rc << ";";
    }
  }
  o.note << suites.size() << " suites, " << bad << " failing";
  o.check(bad == 0, "all suites green");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::vector<std::string> suites;
  std::string cli;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--suite", suites, "unit-test binaries for criterion 11");
  app.add_option("--cli", cli, "ratetip binary for the cli suite");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    double budget_s;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> all{
      {1, 5.0, c1},
      {2, 1.0, c2},
      {3, 120.0, c3},
      {4, 300.0, [&](Outcome& o) { c4(o, jobs); }},
      {5, 300.0, c5},
      {6, 120.0, c6},
      {7, 120.0, c7},
      {8, 3600.0, [&](Outcome& o) { c8(o, jobs); }},
      {9, 1.0, c9},
      {10, 600.0, [&](Outcome& o) { c10(o, jobs); }},
      {11, 120.0, [&](Outcome& o) { c11(o, suites, cli); }},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(wall <= c.budget_s, "runtime over " + num(c.budget_s) + " s");
    if (!o.pass) ++failed;
    std::printf("criterion %2d %s  %s  (%.1f s)\n", c.id, o.pass ? "PASS" : "FAIL", o.note.str().c_str(), wall);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
