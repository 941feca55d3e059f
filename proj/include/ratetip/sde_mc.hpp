#pragma once

// Euler-Maruyama ensembles for dX = f(X, lambda(t)) dt + sqrt(2D) dW with
// absorption at x_T (or at a moving threshold), survivor statistics on the
// reporting grid and empirical indicators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "fokker_planck.hpp"
#include "indicators.hpp"
#include "model.hpp"

namespace ratetip {

struct InitialCondition {
  enum class Kind { point, stationary } kind = Kind::point;
  double value = -1.0;  // x0 for point, lambda0 for stationary

  static InitialCondition point(double x0) { return {Kind::point, x0}; }
  static InitialCondition stationary(double lam0) { return {Kind::stationary, lam0}; }
};

struct EnsembleConfig {
  long n_paths = 100000;
  double dt_sim = 1e-3;
  std::uint64_t seed = 0;
  InitialCondition initial = InitialCondition::point(-1.0);
  /// Escape at x >= x~(t) = x_u(t) + y instead of x >= x_T when set.
  std::optional<double> threshold_y;
  unsigned jobs = 1;

  void validate(const ModelParams& p) const {
    if (n_paths < 1) throw InvalidArgument("ensemble: n_paths >= 1 required");
    if (!(dt_sim > 0.0) || dt_sim > p.dt * (1.0 + 1e-12))
      throw InvalidArgument("ensemble: require 0 < dt_sim <= dt");
    if (threshold_y && !(*threshold_y > 0.0)) throw InvalidArgument("ensemble: y must be positive");
  }
};

/// Raw survivor sums on the reporting grid, indexed by reporting step n
/// (n = 0 is the start).  Products pair x at t_{n-1} and t_n on paths alive
/// at t_n.
struct SurvivorSums {
  std::vector<double> count, s1, s2, s3, s4, p1, p2, cross;

  void resize(std::size_t n) {
    for (auto* v : {&count, &s1, &s2, &s3, &s4, &p1, &p2, &cross}) v->assign(n, 0.0);
  }
  void add(const SurvivorSums& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(count, o.count), acc(s1, o.s1), acc(s2, o.s2), acc(s3, o.s3), acc(s4, o.s4);
    acc(p1, o.p1), acc(p2, o.p2), acc(cross, o.cross);
  }
};

struct EnsembleResult {
  std::vector<double> times;
  std::vector<double> mean, variance, autocorrelation;
  std::vector<long> survivors;
  double escape_fraction = 0.0;
  std::vector<double> escape_times;  // ascending
  long n_paths = 0;
  double dt_report = 0.01;
  double final_mean = 0.0;  // mean of x over all paths at the final time (escaped ones frozen)
  SurvivorSums sums;
  std::uint64_t seed = 0;
  double dt_sim = 0.0;

  double escape_fraction_se() const {
    return std::sqrt(std::max(0.0, escape_fraction * (1.0 - escape_fraction)) / n_paths);
  }
};

namespace detail {

/// Per-path generator: independent stream from (seed, path index).
inline std::mt19937_64 path_rng(std::uint64_t seed, long path) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(
                                                          static_cast<std::uint64_t>(path) >> 32)};
  return std::mt19937_64(seq);
}

/// Inverse-CDF sampler for the truncated stationary density.
class StationarySampler {
 public:
  StationarySampler(double lam0, double D, const Grid1D& g) {
    const auto d = stationary_density(lam0, D, g);
    x_.resize(g.n_nodes());
    cdf_.assign(g.n_nodes(), 0.0);
    for (int i = 0; i < g.n_nodes(); ++i) x_[i] = g.node(i);
    for (int i = 1; i < g.n_nodes(); ++i)
      cdf_[i] = cdf_[i - 1] + 0.5 * (d.values[i - 1] + d.values[i]) * g.h();
    for (double& c : cdf_) c /= cdf_.back();
  }

  /// Piecewise-linear density: exact inversion of the trapezoid CDF is a
  /// quadratic; linear interpolation of the CDF is accurate to O(h^2).
  double operator()(double u) const {
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), 1, cdf_.size() - 1);
    const double w = (u - cdf_[i - 1]) / std::max(cdf_[i] - cdf_[i - 1], 1e-300);
    return x_[i - 1] + std::clamp(w, 0.0, 1.0) * (x_[i] - x_[i - 1]);
  }

 private:
  std::vector<double> x_, cdf_;
};

/// Pairwise reduction of block partial sums in block order.
inline SurvivorSums pairwise_reduce(std::vector<SurvivorSums>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return parts[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  SurvivorSums a = pairwise_reduce(parts, lo, mid);
  a.add(pairwise_reduce(parts, mid, hi));
  return a;
}

}  // namespace detail

/// Euler-Maruyama ensemble on [t_span.first, t_span.second].  Paths are
/// frozen at their first crossing of x_T (or x~) and drop out of the
/// survivor statistics.  D = 0 is allowed (noiseless limit).
inline EnsembleResult run_ensemble(const EnsembleConfig& config, const ModelParams& params,
                                   std::pair<double, double> t_span) {
  config.validate(params);
  if (!(params.D >= 0.0)) throw InvalidArgument("run_ensemble: D must be non-negative");
  const auto [ta, tb] = t_span;
  if (!(ta < tb)) throw InvalidArgument("run_ensemble: empty time span");
  const int n_rec = detail::steps_between(ta, tb, params.dt);
  const int sub = std::max(1, static_cast<int>(std::lround(params.dt / config.dt_sim)));
  const double h = params.dt / sub;
  const double sig = std::sqrt(2.0 * params.D * h);
  const long n_steps = static_cast<long>(n_rec) * sub;

  // lambda and the escape level at every substep end (and midpoints are not
  // needed: Euler uses the left endpoint)
  std::vector<double> lam(n_steps + 1), level(n_steps + 1, params.xT);
  for (long k = 0; k <= n_steps; ++k) lam[k] = lambda_at(ta + k * h, params);
  if (config.threshold_y) {
    ModelParams pref = params;
    const auto ref = deterministic_trajectory(params.x0, std::min(ta, params.t0), tb, pref);
    for (long k = 0; k <= n_steps; ++k) level[k] = ref.at(ta + k * h) + *config.threshold_y;
  }
  std::optional<detail::StationarySampler> sampler;
  if (config.initial.kind == InitialCondition::Kind::stationary) {
    if (!(params.D > 0.0)) throw InvalidArgument("run_ensemble: stationary start needs D > 0");
    sampler.emplace(config.initial.value, params.D, Grid1D{params.x_start, params.x_end, 3200});
  }

  constexpr long block = 1024;
  const long n_blocks = (config.n_paths + block - 1) / block;
  std::vector<SurvivorSums> parts(static_cast<std::size_t>(n_blocks));
  std::vector<std::vector<double>> esc(static_cast<std::size_t>(n_blocks));
  std::vector<double> final_sum(static_cast<std::size_t>(n_blocks), 0.0);

  auto run_block = [&](long b) {
    auto& S = parts[b];
    S.resize(static_cast<std::size_t>(n_rec) + 1);
    const long p_end = std::min(config.n_paths, (b + 1) * block);
    for (long path = b * block; path < p_end; ++path) {
      auto rng = detail::path_rng(config.seed, path);
      std::normal_distribution<double> normal(0.0, 1.0);
      double x = config.initial.value;
      if (sampler) x = (*sampler)(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
      S.count[0] += 1, S.s1[0] += x, S.s2[0] += x * x, S.s3[0] += x * x * x, S.s4[0] += x * x * x * x;
      bool alive = x < level[0];
      if (!alive) esc[b].push_back(ta);
      long k = 0;
      for (int n = 1; n <= n_rec && alive; ++n) {
        const double x_prev = x;
        for (int j = 0; j < sub; ++j, ++k) {
          const double s = x + lam[k];
          x += (s * s - 1.0) * h;
          if (sig > 0.0) x += sig * normal(rng);
          if (x >= level[k + 1]) {
            alive = false;
            esc[b].push_back(ta + (k + 1) * h);
            x = std::min(x, 50.0);
            break;
          }
        }
        if (!alive) break;
        const double x2 = x * x;
        S.count[n] += 1, S.s1[n] += x, S.s2[n] += x2, S.s3[n] += x2 * x, S.s4[n] += x2 * x2;
        S.p1[n] += x_prev, S.p2[n] += x_prev * x_prev, S.cross[n] += x_prev * x;
      }
      final_sum[b] += x;
    }
  };

  const unsigned jobs = std::max(1u, config.jobs);
  if (jobs == 1) {
    for (long b = 0; b < n_blocks; ++b) run_block(b);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (long b = w; b < n_blocks; b += jobs) run_block(b);
      });
    for (auto& t : pool) t.join();
  }

  EnsembleResult r;
  r.n_paths = config.n_paths;
  r.dt_report = params.dt;
  r.seed = config.seed;
  r.dt_sim = h;
  r.sums = detail::pairwise_reduce(parts, 0, parts.size());
  for (auto& e : esc) r.escape_times.insert(r.escape_times.end(), e.begin(), e.end());
  std::sort(r.escape_times.begin(), r.escape_times.end());
  r.escape_fraction = static_cast<double>(r.escape_times.size()) / config.n_paths;
  std::vector<double> v = final_sum;
  while (v.size() > 1) {
    std::vector<double> w((v.size() + 1) / 2, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) w[i / 2] += v[i];
    v.swap(w);
  }
  r.final_mean = v[0] / config.n_paths;
  const auto& S = r.sums;
  for (int n = 0; n <= n_rec; ++n) {
    r.times.push_back(ta + n * params.dt);
    r.survivors.push_back(static_cast<long>(S.count[n]));
    const double c = S.count[n];
    const double m = c > 0 ? S.s1[n] / c : std::nan("");
    r.mean.push_back(m);
    r.variance.push_back(c > 1 ? (S.s2[n] - c * m * m) / (c - 1) : std::nan(""));
    if (n == 0 || c < 2) {
      r.autocorrelation.push_back(std::nan(""));
      continue;
    }
    const double mp = S.p1[n] / c;
    const double vp = S.p2[n] / c - mp * mp;
    const double vn = S.s2[n] / c - m * m;
    r.autocorrelation.push_back((S.cross[n] / c - mp * m) / std::sqrt(vp * vn));
  }
  return r;
}

/// Sample lag-1 indicators of the surviving paths with standard errors.
/// dt_report must equal the ensemble reporting step.  The series stops at
/// the first step with fewer than 100 survivors (truncated = true).
struct EmpiricalIndicators {
  IndicatorSeries series;
  std::vector<double> autocorrelation_se;
  std::vector<double> variance_se;
};

inline EmpiricalIndicators empirical_indicators(const EnsembleResult& result, double dt_report) {
  if (std::abs(dt_report - result.dt_report) > 1e-12 * result.dt_report)
    throw InvalidArgument("empirical_indicators: dt_report must equal the recording step");
  const auto& S = result.sums;
  if (S.count.size() < 2 || S.count[1] < 100)
    throw TooFewSurvivors("empirical_indicators: fewer than 100 surviving paths");
  EmpiricalIndicators out;
  out.series.dt = dt_report;
  for (std::size_t n = 1; n < S.count.size(); ++n) {
    const double c = S.count[n];
    if (c < 100) {
      out.series.truncated = true;
      break;
    }
    const double m = S.s1[n] / c, mp = S.p1[n] / c;
    const double vn = S.s2[n] / c - m * m, vp = S.p2[n] / c - mp * mp;
    const double a = (S.cross[n] / c - mp * m) / std::sqrt(vp * vn);
    const double e3 = S.s3[n] / c, e4 = S.s4[n] / c;
    const double mu4 = e4 - 4 * m * e3 + 6 * m * m * (S.s2[n] / c) - 3 * m * m * m * m;
    const double var = vn * c / (c - 1);
    out.series.times.push_back(result.times[n]);
    out.series.autocorrelation.push_back(a);
    out.series.variance.push_back(var);
    out.series.decay_rate.push_back((1.0 - a) / dt_report);
    out.series.mean.push_back(m);
    out.series.survival.push_back(c / result.n_paths);
    out.autocorrelation_se.push_back((1.0 - a * a) / std::sqrt(c - 3.0));
    out.variance_se.push_back(std::sqrt(std::max(0.0, mu4 - vn * vn) / c));
  }
  return out;
}

}  // namespace ratetip
