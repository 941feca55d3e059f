#pragma once

// Piecewise-polynomial collocation for boundary-value problems on [0, 1]
// with free parameters and integral conditions, solved by damped Newton.
//
// Each mesh interval carries a degree-4 polynomial through 5 equally spaced
// points (endpoints shared with the neighbours) and is collocated at the 4
// Gauss-Legendre points.  The Jacobian comes from forward-mode AD of the
// problem's templated functions.
//
// A Problem provides
//   static constexpr int n, np, nbc, ni;
//   template <class S> void rhs(double tau, const S* y, const S* p, S* f) const;
//   template <class S> void bc(const S* ya, const S* yb, const S* p, S* r) const;      // nbc rows
//   template <class S> void integrand(double tau, const S* y, const S* p, S* g) const; // ni rows
//   template <class S> void integral_residual(const S* I, const S* p, S* r) const;     // ni rows
// A well-posed solve has nbc + ni - n free parameters.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "dual.hpp"
#include "errors.hpp"

namespace ratetip::colloc {

inline constexpr int kDegree = 4;
inline constexpr int kPoints = kDegree + 1;

namespace detail {

struct Tables {
  std::array<double, kDegree> xi{};                // Gauss points on [0, 1]
  std::array<double, kDegree> w{};                 // weights on [0, 1]
  std::array<std::array<double, kPoints>, kDegree> L{};   // basis values at Gauss points
  std::array<std::array<double, kPoints>, kDegree> dL{};  // basis derivatives (unit interval)
};

inline double basis(int j, double s) {
  double v = 1.0;
  for (int m = 0; m < kPoints; ++m)
    if (m != j) v *= (s - double(m) / kDegree) / (double(j - m) / kDegree);
  return v;
}

inline double basis_d(int j, double s) {
  double total = 0.0;
  for (int l = 0; l < kPoints; ++l) {
    if (l == j) continue;
    double v = 1.0 / (double(j - l) / kDegree);
    for (int m = 0; m < kPoints; ++m)
      if (m != j && m != l) v *= (s - double(m) / kDegree) / (double(j - m) / kDegree);
    total += v;
  }
  return total;
}

inline const Tables& tables() {
  static const Tables t = [] {
    Tables t;
    const double g[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                         0.8611363115940526};
    const double w[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                         0.3478548451374538};
    for (int c = 0; c < kDegree; ++c) {
      t.xi[c] = 0.5 * (g[c] + 1.0);
      t.w[c] = 0.5 * w[c];
      for (int j = 0; j < kPoints; ++j) {
        t.L[c][j] = basis(j, t.xi[c]);
        t.dL[c][j] = basis_d(j, t.xi[c]);
      }
    }
    return t;
  }();
  return t;
}

}  // namespace detail

struct Mesh {
  std::vector<double> nodes;

  static Mesh uniform(int n_intervals) {
    if (n_intervals < 1) throw InvalidArgument("mesh: need at least one interval");
    Mesh m;
    m.nodes.resize(n_intervals + 1);
    for (int i = 0; i <= n_intervals; ++i) m.nodes[i] = double(i) / n_intervals;
    return m;
  }
  int n_intervals() const { return static_cast<int>(nodes.size()) - 1; }
  int n_points() const { return n_intervals() * kDegree + 1; }
  double h(int i) const { return nodes[i + 1] - nodes[i]; }
  /// tau of global Lagrange point k.
  double point(int k) const {
    const int i = std::min(k / kDegree, n_intervals() - 1);
    return nodes[i] + h(i) * double(k - i * kDegree) / kDegree;
  }
  int locate(double tau) const {
    auto it = std::upper_bound(nodes.begin(), nodes.end(), tau);
    return std::clamp(static_cast<int>(it - nodes.begin()) - 1, 0, n_intervals() - 1);
  }
};

/// Values of all n states at every Lagrange point, plus the parameters.
struct Solution {
  Mesh mesh;
  int n = 0;
  std::vector<double> y;  // point-major: y[k * n + r]
  std::vector<double> p;

  double& at(int k, int r) { return y[static_cast<std::size_t>(k) * n + r]; }
  double at(int k, int r) const { return y[static_cast<std::size_t>(k) * n + r]; }

  double eval(double tau, int r) const {
    const int i = mesh.locate(tau);
    const double s = (tau - mesh.nodes[i]) / mesh.h(i);
    double v = 0.0;
    for (int j = 0; j < kPoints; ++j) v += detail::basis(j, s) * at(i * kDegree + j, r);
    return v;
  }
  double eval_d(double tau, int r) const {
    const int i = mesh.locate(tau);
    const double s = (tau - mesh.nodes[i]) / mesh.h(i);
    double v = 0.0;
    for (int j = 0; j < kPoints; ++j) v += detail::basis_d(j, s) * at(i * kDegree + j, r);
    return v / mesh.h(i);
  }
};

/// Resample a solution onto another mesh (polynomial interpolation).
inline Solution remesh(const Solution& s, const Mesh& m) {
  Solution out{m, s.n, std::vector<double>(static_cast<std::size_t>(m.n_points()) * s.n), s.p};
  for (int k = 0; k < m.n_points(); ++k)
    for (int r = 0; r < s.n; ++r) out.at(k, r) = s.eval(m.point(k), r);
  return out;
}

/// Secant predictor for pseudo-arclength: the solve adds the row
/// dot(tangent, u - u_pred) = 0 over the unknown vector (all states, then the
/// free parameters in order, then the continuation parameter).
struct Arclength {
  int parameter;                 // index of the extra free parameter
  std::vector<double> tangent;   // length = states + free + 1
  std::vector<double> predicted;
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 50;
  double min_damping = 1.0 / 1024.0;
};

struct NewtonReport {
  int iterations = 0;
  double residual = 0.0;
};

/// Residual and sparse Jacobian of the discretised problem.
template <class Problem>
class System {
 public:
  static constexpr int n = Problem::n, np = Problem::np, nbc = Problem::nbc, ni = Problem::ni;

  System(const Problem& prob, const Mesh& mesh, std::vector<int> free, const Arclength* arc)
      : prob_(prob), mesh_(mesh), free_(std::move(free)), arc_(arc) {
    if (static_cast<int>(free_.size()) != nbc + ni - n)
      throw InvalidArgument("collocation: free parameter count does not match conditions");
    if (arc_) free_.push_back(arc_->parameter);
    n_states_ = mesh_.n_points() * n;
    n_unknowns_ = n_states_ + static_cast<int>(free_.size());
  }

  int size() const { return n_unknowns_; }
  int n_states() const { return n_states_; }
  const std::vector<int>& free() const { return free_; }

  std::vector<double> pack(const Solution& s) const {
    std::vector<double> u(s.y);
    for (int f : free_) u.push_back(s.p[f]);
    return u;
  }
  void unpack(const std::vector<double>& u, Solution& s) const {
    std::copy(u.begin(), u.begin() + n_states_, s.y.begin());
    for (std::size_t q = 0; q < free_.size(); ++q) s.p[free_[q]] = u[n_states_ + q];
  }

  /// Residual only (cheap path for line search).
  std::vector<double> residual(const Solution& s) const {
    std::vector<double> F(n_unknowns_, 0.0);
    const auto& T = detail::tables();
    std::array<double, n> yc{}, f{};
    std::array<double, ni> g{}, I{};
    const int N = mesh_.n_intervals();
    for (int i = 0; i < N; ++i) {
      const double h = mesh_.h(i);
      for (int c = 0; c < kDegree; ++c) {
        std::array<double, n> dy{};
        yc.fill(0.0);
        for (int j = 0; j < kPoints; ++j)
          for (int r = 0; r < n; ++r) {
            yc[r] += T.L[c][j] * s.at(i * kDegree + j, r);
            dy[r] += T.dL[c][j] * s.at(i * kDegree + j, r);
          }
        const double tau = mesh_.nodes[i] + h * T.xi[c];
        prob_.rhs(tau, yc.data(), s.p.data(), f.data());
        for (int r = 0; r < n; ++r) F[(i * kDegree + c) * n + r] = dy[r] - h * f[r];
        prob_.integrand(tau, yc.data(), s.p.data(), g.data());
        for (int q = 0; q < ni; ++q) I[q] += T.w[c] * h * g[q];
      }
    }
    std::array<double, nbc> rb{};
    prob_.bc(&s.y[0], &s.y[static_cast<std::size_t>(mesh_.n_points() - 1) * n], s.p.data(), rb.data());
    const int row_bc = N * kDegree * n;
    for (int b = 0; b < nbc; ++b) F[row_bc + b] = rb[b];
    std::array<double, ni> ri{};
    prob_.integral_residual(I.data(), s.p.data(), ri.data());
    for (int q = 0; q < ni; ++q) F[row_bc + nbc + q] = ri[q];
    if (arc_) {
      const auto u = pack(s);
      double d = 0.0;
      for (int k = 0; k < n_unknowns_; ++k) d += arc_->tangent[k] * (u[k] - arc_->predicted[k]);
      F[n_unknowns_ - 1] = d;
    }
    return F;
  }

  /// Residual and Jacobian.
  std::vector<double> linearise(const Solution& s, Eigen::SparseMatrix<double>& J) const {
    using D1 = Dual<n + np>;
    using D2 = Dual<2 * n + np>;
    using D3 = Dual<ni + np>;
    const auto& T = detail::tables();
    std::vector<Eigen::Triplet<double>> trip;
    const int N = mesh_.n_intervals();
    trip.reserve(static_cast<std::size_t>(N) * kDegree * n * (kPoints * n + 4) + 4 * n_unknowns_);
    std::vector<double> F(n_unknowns_, 0.0);
    std::vector<int> pcol(np, -1);
    for (std::size_t q = 0; q < free_.size(); ++q) pcol[free_[q]] = n_states_ + static_cast<int>(q);

    std::array<D1, np> pd;
    for (int k = 0; k < np; ++k) pd[k] = D1::variable(s.p[k], n + k);
    // integral rows: dI/dy over all states, dI/dp
    std::vector<std::array<double, ni>> dIdy(n_states_);
    for (auto& a : dIdy) a.fill(0.0);
    std::array<double, ni> I{};
    std::array<std::array<double, np>, ni> dIdp{};

    for (int i = 0; i < N; ++i) {
      const double h = mesh_.h(i);
      for (int c = 0; c < kDegree; ++c) {
        std::array<D1, n> yc;
        std::array<double, n> dy{};
        for (int r = 0; r < n; ++r) {
          double v = 0.0;
          for (int j = 0; j < kPoints; ++j) {
            v += T.L[c][j] * s.at(i * kDegree + j, r);
            dy[r] += T.dL[c][j] * s.at(i * kDegree + j, r);
          }
          yc[r] = D1::variable(v, r);
        }
        const double tau = mesh_.nodes[i] + h * T.xi[c];
        std::array<D1, n> f;
        prob_.rhs(tau, yc.data(), pd.data(), f.data());
        for (int r = 0; r < n; ++r) {
          const int row = (i * kDegree + c) * n + r;
          F[row] = dy[r] - h * f[r].v;
          for (int j = 0; j < kPoints; ++j) {
            const int kpt = i * kDegree + j;
            for (int r2 = 0; r2 < n; ++r2) {
              double v = -h * f[r].d[r2] * T.L[c][j];
              if (r2 == r) v += T.dL[c][j];
              if (v != 0.0) trip.emplace_back(row, kpt * n + r2, v);
            }
          }
          for (int k = 0; k < np; ++k)
            if (pcol[k] >= 0 && f[r].d[n + k] != 0.0) trip.emplace_back(row, pcol[k], -h * f[r].d[n + k]);
        }
        std::array<D1, ni> g;
        prob_.integrand(tau, yc.data(), pd.data(), g.data());
        for (int q = 0; q < ni; ++q) {
          const double wq = T.w[c] * h;
          I[q] += wq * g[q].v;
          for (int k = 0; k < np; ++k) dIdp[q][k] += wq * g[q].d[n + k];
          for (int j = 0; j < kPoints; ++j) {
            const int kpt = i * kDegree + j;
            for (int r2 = 0; r2 < n; ++r2) dIdy[kpt * n + r2][q] += wq * g[q].d[r2] * T.L[c][j];
          }
        }
      }
    }

    // boundary conditions
    const int row_bc = N * kDegree * n;
    const int last = (mesh_.n_points() - 1) * n;
    {
      std::array<D2, n> ya, yb;
      std::array<D2, np> p2;
      for (int r = 0; r < n; ++r) {
        ya[r] = D2::variable(s.y[r], r);
        yb[r] = D2::variable(s.y[last + r], n + r);
      }
      for (int k = 0; k < np; ++k) p2[k] = D2::variable(s.p[k], 2 * n + k);
      std::array<D2, nbc> rb;
      prob_.bc(ya.data(), yb.data(), p2.data(), rb.data());
      for (int b = 0; b < nbc; ++b) {
        F[row_bc + b] = rb[b].v;
        for (int r = 0; r < n; ++r) {
          if (rb[b].d[r] != 0.0) trip.emplace_back(row_bc + b, r, rb[b].d[r]);
          if (rb[b].d[n + r] != 0.0) trip.emplace_back(row_bc + b, last + r, rb[b].d[n + r]);
        }
        for (int k = 0; k < np; ++k)
          if (pcol[k] >= 0 && rb[b].d[2 * n + k] != 0.0) trip.emplace_back(row_bc + b, pcol[k], rb[b].d[2 * n + k]);
      }
    }

    // integral conditions r(I, p)
    {
      std::array<D3, ni> Id;
      std::array<D3, np> p3;
      for (int q = 0; q < ni; ++q) Id[q] = D3::variable(I[q], q);
      for (int k = 0; k < np; ++k) p3[k] = D3::variable(s.p[k], ni + k);
      std::array<D3, ni> ri;
      prob_.integral_residual(Id.data(), p3.data(), ri.data());
      for (int q = 0; q < ni; ++q) {
        const int row = row_bc + nbc + q;
        F[row] = ri[q].v;
        for (int col = 0; col < n_states_; ++col) {
          double v = 0.0;
          for (int q2 = 0; q2 < ni; ++q2) v += ri[q].d[q2] * dIdy[col][q2];
          if (v != 0.0) trip.emplace_back(row, col, v);
        }
        for (int k = 0; k < np; ++k) {
          if (pcol[k] < 0) continue;
          double v = ri[q].d[ni + k];
          for (int q2 = 0; q2 < ni; ++q2) v += ri[q].d[q2] * dIdp[q2][k];
          if (v != 0.0) trip.emplace_back(row, pcol[k], v);
        }
      }
    }

    if (arc_) {
      const auto u = pack(s);
      double d = 0.0;
      for (int k = 0; k < n_unknowns_; ++k) {
        d += arc_->tangent[k] * (u[k] - arc_->predicted[k]);
        if (arc_->tangent[k] != 0.0) trip.emplace_back(n_unknowns_ - 1, k, arc_->tangent[k]);
      }
      F[n_unknowns_ - 1] = d;
    }

    J.resize(n_unknowns_, n_unknowns_);
    J.setFromTriplets(trip.begin(), trip.end());
    J.makeCompressed();
    return F;
  }

 private:
  const Problem& prob_;
  const Mesh& mesh_;
  std::vector<int> free_;
  const Arclength* arc_;
  int n_states_ = 0;
  int n_unknowns_ = 0;
};

// NaN propagates
inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) {
    if (std::isnan(x)) return x;
    m = std::max(m, std::abs(x));
  }
  return m;
}

/// Damped Newton with Armijo backtracking on the max-norm residual.  The
/// collocation rows are scaled by the interval length (mismatch of the
/// state increment across each subinterval).  `s` is updated in place.
template <class Problem>
NewtonReport solve(const Problem& prob, Solution& s, const std::vector<int>& free,
                   const NewtonOptions& opt = {}, const Arclength* arc = nullptr) {
  System<Problem> sys(prob, s.mesh, free, arc);
  Eigen::SparseMatrix<double> J;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  bool analysed = false;
  NewtonReport rep;
  std::vector<double> F = sys.linearise(s, J);
  double res = max_abs(F);
  if (!std::isfinite(res)) throw NewtonDiverged(res);
  for (int it = 0; it < opt.max_iter; ++it) {
    rep.iterations = it;
    rep.residual = res;
    if (res < opt.tol) return rep;
    if (!analysed) {
      lu.analyzePattern(J);
      analysed = true;
    }
    lu.factorize(J);
    if (lu.info() != Eigen::Success) throw SingularJacobian("collocation: singular Jacobian");
    Eigen::Map<const Eigen::VectorXd> rhs(F.data(), static_cast<Eigen::Index>(F.size()));
    Eigen::VectorXd du = lu.solve(-rhs);
    if (lu.info() != Eigen::Success || !du.allFinite())
      throw SingularJacobian("collocation: linear solve failed");
    const auto u0 = sys.pack(s);
    // at roundoff level the residual stops decreasing; a negligible Newton
    // correction then means convergence
    if (du.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + max_abs(u0))) return rep;
    double alpha = 1.0;
    Solution trial = s;
    std::vector<double> u(u0.size());
    double res_new = 0.0;
    for (;;) {
      for (std::size_t k = 0; k < u.size(); ++k) u[k] = u0[k] + alpha * du[static_cast<Eigen::Index>(k)];
      sys.unpack(u, trial);
      res_new = max_abs(sys.residual(trial));
      if (std::isfinite(res_new) && res_new <= (1.0 - 1e-4 * alpha) * res) break;
      // a full step that lands at roundoff level is accepted as converged
      if (alpha == 1.0 && std::isfinite(res_new) && res_new < opt.tol) break;
      alpha *= 0.5;
      if (alpha < opt.min_damping) throw NewtonDiverged(res);
    }
    s = std::move(trial);
    F = sys.linearise(s, J);
    res = max_abs(F);
  }
  rep.iterations = opt.max_iter;
  rep.residual = res;
  if (res < opt.tol) return rep;
  throw MaxIterations(res);
}

/// Equidistributes the interval monitor (|y^(k)| / scale)^(1/k), maximised
/// over components, plus a floor that keeps the mesh from collapsing.
/// Returns a mesh with the requested number of intervals.
inline Mesh adapted_mesh(const Solution& s, int n_intervals, double floor_fraction = 0.1) {
  const Mesh& m = s.mesh;
  const int N = m.n_intervals();
  std::vector<double> scale(s.n, 0.0);
  for (int k = 0; k < m.n_points(); ++k)
    for (int r = 0; r < s.n; ++r) scale[r] = std::max(scale[r], std::abs(s.at(k, r)));
  std::vector<double> mon(N, 0.0);
  const double c4[kPoints] = {1.0, -4.0, 6.0, -4.0, 1.0};
  for (int i = 0; i < N; ++i) {
    const double hs = m.h(i) / kDegree;
    double best = 0.0;
    for (int r = 0; r < s.n; ++r) {
      double d = 0.0;
      for (int j = 0; j < kPoints; ++j) d += c4[j] * s.at(i * kDegree + j, r);
      const double deriv = std::abs(d) / std::pow(hs, kDegree) / std::max(scale[r], 1e-12);
      best = std::max(best, std::pow(deriv, 1.0 / kDegree));
    }
    mon[i] = best;
  }
  double total = 0.0;
  for (int i = 0; i < N; ++i) total += mon[i] * m.h(i);
  const double floor = floor_fraction * std::max(total, 1e-300);
  std::vector<double> cum(N + 1, 0.0);
  for (int i = 0; i < N; ++i) cum[i + 1] = cum[i] + (mon[i] + floor) * m.h(i);
  Mesh out;
  out.nodes.resize(n_intervals + 1);
  out.nodes.front() = 0.0;
  out.nodes.back() = 1.0;
  int i = 0;
  for (int k = 1; k < n_intervals; ++k) {
    const double target = cum[N] * k / n_intervals;
    while (i < N - 1 && cum[i + 1] < target) ++i;
    const double w = (target - cum[i]) / (cum[i + 1] - cum[i]);
    out.nodes[k] = m.nodes[i] + w * m.h(i);
  }
  return out;
}

/// Integral of a function of (tau, y) over [0, 1] with an n_gauss-point
/// Gauss-Legendre rule per interval (n_gauss in {4, 8}).
template <class Fn>
double integrate(const Solution& s, Fn&& fn, int n_gauss = 8) {
  static const double g4[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                               0.8611363115940526};
  static const double w4[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                               0.3478548451374538};
  static const double g8[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                               -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                               0.7966664774136267,  0.9602898564975363};
  static const double w8[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                               0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                               0.2223810344533745, 0.1012285362903763};
  const double* g = n_gauss == 8 ? g8 : g4;
  const double* w = n_gauss == 8 ? w8 : w4;
  const int ng = n_gauss == 8 ? 8 : 4;
  const Mesh& m = s.mesh;
  std::vector<double> y(s.n);
  double total = 0.0;
  for (int i = 0; i < m.n_intervals(); ++i) {
    const double h = m.h(i);
    double part = 0.0;
    for (int c = 0; c < ng; ++c) {
      const double xi = 0.5 * (g[c] + 1.0);
      for (int r = 0; r < s.n; ++r) {
        double v = 0.0;
        for (int j = 0; j < kPoints; ++j) v += detail::basis(j, xi) * s.at(i * kDegree + j, r);
        y[r] = v;
      }
      part += 0.5 * w[c] * fn(m.nodes[i] + h * xi, y.data());
    }
    total += part * h;
  }
  return total;
}

}  // namespace ratetip::colloc
