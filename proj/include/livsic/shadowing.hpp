#pragma once

// Nonlinear estimates along orbit segments: localized fiber maps and their
// C^1 gap to the derivative, conjugated gaps, finite-horizon stable graphs,
// fake stable points and fiber closing.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "livsic/cocycle.hpp"
#include "livsic/linalg.hpp"

namespace livsic {

/// A C^1 map of R^q given by value and Jacobian.
using TangentMap = std::function<Jet(const Vec&)>;

inline TangentMap linear_map(const Mat& L) {
  return [L](const Vec& v) { return Jet{L * v, L}; };
}

// ---------------------------------------------------------------- bump and localization

/// rho_r(|v|): 1 on |v| <= r, 0 on |v| >= 2r, cubic smoothstep in between.
inline double bump(double r, double norm_v) {
  if (norm_v <= r) return 1.0;
  if (norm_v >= 2 * r) return 0.0;
  const double t = (norm_v - r) / r;
  return 1.0 - t * t * (3.0 - 2.0 * t);
}

/// d rho_r / d|v|; its largest magnitude is 1.5 / r at |v| = 1.5 r.
inline double bump_slope(double r, double norm_v) {
  if (norm_v <= r || norm_v >= 2 * r) return 0.0;
  const double t = (norm_v - r) / r;
  return -6.0 * t * (1.0 - t) / r;
}

/// g^r(v) = rho_r(v) G(v) + (1 - rho_r(v)) Dg_y v with G(v) = g(y + v) - g(y)
/// on lifts (the flat exponential chart).
struct LocalizedMap {
  Diffeo g;
  FiberPoint y;
  double r = 0;
  Vec gy;  // lift of g(y)
  Mat D;   // Dg_y

  Jet operator()(const Vec& v) const {
    const double nv = v.norm();
    const Vec lin = D * v;
    if (nv >= 2 * r) return Jet{lin, D};
    Jet j = g.jet_lift(y + v);
    j.value -= gy;
    if (nv <= r) return j;
    const double rho = bump(r, nv);
    const Vec diff = j.value - lin;
    Jet out;
    out.value = lin + rho * diff;
    out.jacobian = rho * j.jacobian + (1 - rho) * D + diff * (bump_slope(r, nv) / nv) * v.transpose();
    return out;
  }
};

inline LocalizedMap localize(const Diffeo& g, const FiberPoint& y, double r) {
  if (!(r > 0 && r < 0.125)) throw Error(ErrorCode::PreconditionViolated, "localization radius must lie in (0, 1/8)");
  const Jet j = g.jet_lift(y);
  return LocalizedMap{g, y, r, j.value, j.jacobian};
}

/// Points of [-radius, radius]^q, per_dim per axis.
inline std::vector<Vec> box_grid(int q, double radius, int per_dim) {
  std::vector<Vec> out;
  std::vector<int> idx(static_cast<std::size_t>(q), 0);
  const double h = per_dim > 1 ? 2 * radius / (per_dim - 1) : 0;
  while (true) {
    Vec v(q);
    for (int i = 0; i < q; ++i) v(i) = -radius + h * idx[static_cast<std::size_t>(i)];
    out.push_back(v);
    int k = 0;
    while (k < q && ++idx[static_cast<std::size_t>(k)] == per_dim) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == q) break;
  }
  return out;
}

/// sup |f - g| + sup |Df - Dg| over the given points.
inline double c1_gap(const TangentMap& f, const TangentMap& g, const std::vector<Vec>& pts) {
  double c0 = 0, c1 = 0;
  for (const auto& v : pts) {
    const Jet a = f(v), b = g(v);
    c0 = std::max(c0, (a.value - b.value).norm());
    c1 = std::max(c1, op_norm(a.jacobian - b.jacobian));
  }
  return c0 + c1;
}

/// sup over fiber base points y of d_C1(g^r(y, .), Dg_y), the gap measured
/// on a grid of the 2r-box (the maps agree outside the 2r-ball).
inline double localization_gap(const Diffeo& g, double r, int base_per_dim = 0, int grid_per_dim = 0) {
  const int q = g.dim();
  if (base_per_dim <= 0) base_per_dim = q == 1 ? 32 : 8;
  if (grid_per_dim <= 0) grid_per_dim = q == 1 ? 801 : 81;
  const auto pts = box_grid(q, 2 * r, grid_per_dim);
  double worst = 0;
  for (const auto& y : fiber_grid(q, base_per_dim)) {
    const auto loc = localize(g, y, r);
    worst = std::max(worst, c1_gap(TangentMap(loc), linear_map(loc.D), pts));
  }
  return worst;
}

struct LocalizationSlope {
  std::vector<double> radii, gaps;
  double slope = 0;      // fitted exponent of gap against r
  double constant = 0;   // max gap / r^beta, the constant of the O(r^beta) bound
  bool affine = false;   // the gap vanishes identically (affine maps)
};

inline LocalizationSlope localization_slope(const Diffeo& g, const std::vector<double>& radii, double beta = 1.0) {
  LocalizationSlope s;
  s.radii = radii;
  std::vector<double> lx, ly;
  for (double r : radii) {
    const double gap = localization_gap(g, r);
    s.gaps.push_back(gap);
    s.constant = std::max(s.constant, gap / std::pow(r, beta));
    if (gap > 1e-13) {
      lx.push_back(std::log(r));
      ly.push_back(std::log(gap));
    }
  }
  if (lx.size() < 2) {
    s.affine = true;
    return s;
  }
  s.slope = fit_line(lx, ly).second;
  return s;
}

// ---------------------------------------------------------------- conjugated gap

struct ConjugatedGapReport {
  double delta = 0;      // measured d_C1(g, h) over the grid and its image under B
  double gap = 0;        // measured d_C1(A g B, A h B) over the grid
  double bound = 0;      // 4 ell^2 delta
  double norm_a = 0, norm_b = 0;
};

/// d_C1(A g B, A h B) < 4 ell^2 d_C1(g, h) when e^eta < 4/3 and either
/// |A| < ell e^eta, |B| < ell or |A| < ell, |B| < ell e^eta.
inline ConjugatedGapReport conjugated_gap_check(const Mat& A, const Mat& B, const TangentMap& g, const TangentMap& h,
                                                double ell, double eta, const std::vector<Vec>& grid) {
  ConjugatedGapReport rep;
  if (!(std::exp(eta) < 4.0 / 3.0)) throw Error(ErrorCode::PreconditionViolated, "need e^eta < 4/3");
  rep.norm_a = op_norm(A);
  rep.norm_b = op_norm(B);
  const double lo = ell, hi = ell * std::exp(eta);
  if (!((rep.norm_a < hi && rep.norm_b < lo) || (rep.norm_a < lo && rep.norm_b < hi)))
    throw Error(ErrorCode::PreconditionViolated, "norms of A and B outside the allowed pattern");
  std::vector<Vec> pts = grid;
  for (const auto& v : grid) pts.push_back(B * v);
  rep.delta = c1_gap(g, h, pts);
  const TangentMap ag = [&](const Vec& v) {
    const Jet j = g(B * v);
    return Jet{A * j.value, A * j.jacobian * B};
  };
  const TangentMap ah = [&](const Vec& v) {
    const Jet j = h(B * v);
    return Jet{A * j.value, A * j.jacobian * B};
  };
  rep.gap = c1_gap(ag, ah, grid);
  rep.bound = 4 * ell * ell * rep.delta;
  if (rep.gap > 0 && !(rep.gap < rep.bound))
    throw Error(ErrorCode::BoundViolated, "conjugated gap " + std::to_string(rep.gap) + " >= 4 ell^2 delta = " +
                                              std::to_string(rep.bound));
  return rep;
}

// ---------------------------------------------------------------- stable graphs

/// Perturbation radius for which the graph transform keeps 1-Lipschitz
/// graphs: slopes map to at most (lambda + 2a) / (1/lambda - 2a), which is
/// <= 1 for a <= (1/lambda - lambda) / 4; half of that leaves room for the
/// contraction estimate.
inline double hadamard_perron_radius(double lambda) { return (1.0 / lambda - lambda) / 8.0; }

/// Graphs u = phi_i(s) over the box [-radius, radius]^ds, stored on a
/// regular grid and interpolated (multi)linearly. Coordinates are ordered
/// (u, s).
struct StableGraphs {
  int du = 1, ds = 1, per_dim = 65;
  double radius = 1;
  std::vector<std::vector<Vec>> values;  // values[i][node] = phi_i at that node
  int sweeps = 0;
  double invariance_residual = 0;        // max |f_i(phi_i) - phi_{i+1}| at the nodes
  double max_slope = 0;

  double spacing() const { return 2 * radius / (per_dim - 1); }
  Vec node(std::size_t k) const {
    Vec s(ds);
    for (int a = 0; a < ds; ++a) {
      s(a) = -radius + spacing() * static_cast<double>(k % static_cast<std::size_t>(per_dim));
      k /= static_cast<std::size_t>(per_dim);
    }
    return s;
  }
  std::size_t node_count() const {
    std::size_t n = 1;
    for (int a = 0; a < ds; ++a) n *= static_cast<std::size_t>(per_dim);
    return n;
  }
  Vec eval(std::size_t i, const Vec& s) const {
    const auto& g = values[i];
    const double h = spacing();
    std::array<int, 2> lo{0, 0};
    std::array<double, 2> t{0, 0};
    for (int a = 0; a < ds; ++a) {
      const double x = std::clamp((s(a) + radius) / h, 0.0, static_cast<double>(per_dim - 1));
      lo[static_cast<std::size_t>(a)] = std::min(per_dim - 2, static_cast<int>(x));
      t[static_cast<std::size_t>(a)] = x - lo[static_cast<std::size_t>(a)];
    }
    if (ds == 1) return (1 - t[0]) * g[static_cast<std::size_t>(lo[0])] + t[0] * g[static_cast<std::size_t>(lo[0] + 1)];
    const auto at = [&](int a, int b) { return g[static_cast<std::size_t>(a + per_dim * b)]; };
    return (1 - t[0]) * (1 - t[1]) * at(lo[0], lo[1]) + t[0] * (1 - t[1]) * at(lo[0] + 1, lo[1]) +
           (1 - t[0]) * t[1] * at(lo[0], lo[1] + 1) + t[0] * t[1] * at(lo[0] + 1, lo[1] + 1);
  }
  Vec point(std::size_t i, const Vec& s) const {
    Vec x(du + ds);
    x << eval(i, s), s;
    return x;
  }
};

namespace detail {

inline double graph_slope(const StableGraphs& G, const std::vector<Vec>& g) {
  double worst = 0;
  const auto n = static_cast<std::size_t>(G.per_dim);
  for (std::size_t k = 0; k < G.node_count(); ++k) {
    std::size_t stride = 1;
    for (int a = 0; a < G.ds; ++a) {
      if ((k / stride) % n + 1 < n) worst = std::max(worst, (g[k + stride] - g[k]).norm() / G.spacing());
      stride *= n;
    }
  }
  return worst;
}

}  // namespace detail

/// Stable graphs of the sequence f_0, ..., f_{n-1}, closed up periodically
/// (f_n = f_0). Each sweep pulls the graphs back one map at a time, starting
/// from flat graphs; sweeps repeat until phi_0 moves by less than `tol`.
inline StableGraphs finite_graph_transform(const std::vector<Mat>& L, const std::vector<TangentMap>& f, int du, int ds,
                                           double lambda, double radius = 1.0, int per_dim = 65, double tol = 1e-10) {
  const int q = du + ds;
  if (L.empty() || L.size() != f.size()) throw Error(ErrorCode::PreconditionViolated, "need one linear map per map");
  if (ds < 1 || ds > 2 || du < 1 || q > 3) throw Error(ErrorCode::PreconditionViolated, "unsupported splitting");
  if (!(lambda > 0 && lambda < 1)) throw Error(ErrorCode::PreconditionViolated, "lambda must lie in (0, 1)");
  const double alpha2 = hadamard_perron_radius(lambda);
  const auto check_pts = box_grid(q, radius, q == 2 ? 33 : 9);
  for (std::size_t i = 0; i < L.size(); ++i) {
    const Mat& M = L[i];
    if (M.block(0, du, du, ds).norm() > 1e-14 || M.block(du, 0, ds, du).norm() > 1e-14)
      throw Error(ErrorCode::PreconditionViolated, "L_" + std::to_string(i) + " does not preserve the splitting");
    if (!(op_norm(M.block(du, du, ds, ds)) < lambda && op_norm(M.block(0, 0, du, du).inverse()) < lambda))
      throw Error(ErrorCode::PreconditionViolated, "L_" + std::to_string(i) + " violates the rate hypothesis");
    const double d = c1_gap(f[i], linear_map(M), check_pts);
    if (!(d < alpha2))
      throw Error(ErrorCode::PreconditionViolated, "d_C1(f_" + std::to_string(i) + ", L) = " + std::to_string(d) +
                                                       " >= alpha2 = " + std::to_string(alpha2));
  }

  StableGraphs G;
  G.du = du;
  G.ds = ds;
  G.per_dim = per_dim;
  G.radius = radius;
  const std::size_t n = L.size();
  G.values.assign(n, std::vector<Vec>(G.node_count(), Vec::Zero(du)));
  std::vector<Vec> next_values(G.node_count(), Vec::Zero(du));  // phi_n, i.e. phi_0 of the previous sweep

  for (G.sweeps = 1; G.sweeps <= 500; ++G.sweeps) {
    StableGraphs succ = G;  // holds phi_{i+1} while phi_i is solved
    succ.values.assign(1, next_values);
    for (std::size_t ii = n; ii-- > 0;) {
      const Mat Lu_inv = L[ii].block(0, 0, du, du).inverse();
      std::vector<Vec> cur(G.node_count());
      for (std::size_t k = 0; k < G.node_count(); ++k) {
        const Vec s = G.node(k);
        Vec u = ii + 1 < n || G.sweeps > 1 ? G.values[ii][k] : Vec(Vec::Zero(du));
        for (int it = 0; it < 200; ++it) {
          Vec x(q);
          x << u, s;
          const Vec fx = f[ii](x).value;
          const Vec Nu = fx.head(du) - L[ii].block(0, 0, du, du) * u;
          const Vec un = Lu_inv * (succ.eval(0, fx.tail(ds)) - Nu);
          const double change = (un - u).norm();
          u = un;
          if (change < 1e-15) break;
        }
        cur[k] = u;
      }
      const double slope = detail::graph_slope(G, cur);
      if (slope > 1.0 + 1e-9)
        throw Error(ErrorCode::TransformDiverged, "graph " + std::to_string(ii) + " has slope " + std::to_string(slope));
      G.values[ii] = cur;
      succ.values[0] = std::move(cur);
    }
    double moved = 0;
    for (std::size_t k = 0; k < G.node_count(); ++k) moved = std::max(moved, (G.values[0][k] - next_values[k]).norm());
    next_values = G.values[0];
    if (moved < tol) break;
  }
  if (G.sweeps > 500) throw Error(ErrorCode::TransformDiverged, "graph transform did not settle");

  for (std::size_t i = 0; i < n; ++i) {
    G.max_slope = std::max(G.max_slope, detail::graph_slope(G, G.values[i]));
    const std::size_t j = (i + 1) % n;
    for (std::size_t k = 0; k < G.node_count(); ++k) {
      const Vec fx = f[i](G.point(i, G.node(k))).value;
      G.invariance_residual = std::max(G.invariance_residual, (fx.head(du) - G.eval(j, fx.tail(ds))).norm());
    }
  }
  return G;
}

/// |f^k(a) - f^k(b)| / |a - b| for two points of graph i, k = 1..steps. The
/// s-coordinates are iterated by f; u is read back from the next graph,
/// which removes the e^{k log|L_u|} growth of round-off off the graph.
inline std::vector<double> graph_contraction(const StableGraphs& G, const std::vector<TangentMap>& f, std::size_t i,
                                             const Vec& sa, const Vec& sb, int steps) {
  std::vector<double> ratios;
  Vec a = G.point(i, sa), b = G.point(i, sb);
  const double d0 = (a - b).norm();
  const std::size_t n = f.size();
  for (int k = 1; k <= steps; ++k) {
    const std::size_t idx = (i + static_cast<std::size_t>(k) - 1) % n, nxt = (idx + 1) % n;
    a = G.point(nxt, f[idx](a).value.tail(G.ds));
    b = G.point(nxt, f[idx](b).value.tail(G.ds));
    ratios.push_back((a - b).norm() / d0);
  }
  return ratios;
}

// ---------------------------------------------------------------- fake sets

struct FakeSetParams {
  double r0 = 0;
  double C = 2;          // local-invariance constant (power of 2)
  double C_tilde = 1;    // contraction prefactor
  double kappa = 0;
  double eta = 0;
  double alpha2 = 0;
  double beta = 1;
  double ell = 1;
  double K_loc = 0;      // constant of the localization bound K r^beta
  double tau = 0;
  double epsilon0 = 0;   // recurrence threshold for fiber closing
  double floor = 1e-12;  // deviations below this are treated as resolved
  int N0 = 0;
  std::vector<double> radii;

  double radius(int n) const { return radii.at(static_cast<std::size_t>(n)); }
  /// the shadowing constant of the closing argument, K = max(ell, 2 C C~)
  double closing_K() const { return std::max(ell, 2 * C * C_tilde); }
};

/// Constants of the fake-set construction from the measured exponents
/// (distinct values, descending) and the base rate tau. kappa is 0.99 of
/// half the smallest of the exponent gaps and tau; eta and r0 take 0.9 of
/// their upper bounds.
inline FakeSetParams make_fake_set_params(const std::vector<double>& exponents, double tau, double beta, double ell,
                                          double K_loc, double K0, int N0) {
  FakeSetParams p;
  p.beta = beta;
  p.ell = std::max(1.0, ell);
  p.K_loc = K_loc;
  p.tau = tau;
  p.N0 = N0;
  double gap = INFINITY;
  for (std::size_t i = 0; i + 1 < exponents.size(); ++i) gap = std::min(gap, exponents[i] - exponents[i + 1]);
  p.kappa = 0.99 * 0.5 * std::min(gap, tau);
  p.alpha2 = hadamard_perron_radius(std::exp(-p.kappa));
  double eta = std::min(beta * beta * p.kappa, p.alpha2 / 2);
  if (std::isfinite(gap)) eta = std::min(eta, gap / 2 - p.kappa);
  p.eta = 0.9 * eta;
  double r0 = 1.0 / (p.ell * p.ell);
  if (K_loc > 0) r0 = std::min(r0, std::pow(p.alpha2 / (8 * K_loc * p.ell * p.ell), 1.0 / beta));
  p.r0 = 0.9 * std::min(r0, 0.125);
  p.C_tilde = std::max(p.ell * p.ell / 2, K0);
  for (int n = 0; n <= N0; ++n)
    p.radii.push_back(p.r0 * std::exp(-(p.eta / (beta * beta)) * std::min(n, N0 - n)));
  p.epsilon0 = p.r0 / p.closing_K();
  return p;
}

/// max(d_M, d_N)
inline double skew_distance(const BaseSystem& b, const SkewPoint& u, const SkewPoint& v) {
  return std::max(b.distance(u.base, v.base), fiber_distance(u.fiber, v.fiber));
}

/// z_i = (base[i], y_i) with y_{i+1} = A(base[i]) y_i.
inline std::vector<SkewPoint> orbit_along(const Cocycle& A, const std::vector<BasePoint>& base, const FiberPoint& y0) {
  std::vector<SkewPoint> out;
  out.reserve(base.size());
  FiberPoint y = y0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    out.push_back({base[i], y});
    if (i + 1 < base.size()) y = A(base[i]).eval(y);
  }
  return out;
}

/// y_0 with A(base[n-1]) ... A(base[0]) y_0 = y_n.
inline FiberPoint pull_back(const Cocycle& A, const std::vector<BasePoint>& base, FiberPoint y_n) {
  for (std::size_t i = base.size() - 1; i-- > 0;) y_n = A(base[i]).inverse().eval(y_n);
  return y_n;
}

/// (1/len) log sigma_j of the fiber derivative product over orbit[from..end].
/// Starting past the transient matters when the fiber point begins near a
/// repeller.
inline Vec fiber_rates_along(const Cocycle& A, const std::vector<SkewPoint>& orbit, std::size_t from = 0) {
  const int q = A.fiber_dim();
  ScaledMatrix p = ScaledMatrix::identity(q);
  const std::size_t n = orbit.size() - 1;
  if (from >= n) return Vec::Zero(q);
  for (std::size_t i = from; i < n; ++i) p = p.left_multiplied(A(orbit[i].base).deriv(orbit[i].fiber));
  return p.log_singular_values() / static_cast<double>(n - from);
}

/// Orbit of `target` along the stable leaf of x: on the torus the offset is
/// projected onto the stable direction and carried analytically, so the
/// unstable round-off of a grid point never enters; on the shift the
/// target is iterated exactly.
inline std::vector<BasePoint> stable_leaf_orbit(const BaseSystem& b, const std::vector<BasePoint>& x_orbit,
                                                const BasePoint& target) {
  std::vector<BasePoint> out;
  out.reserve(x_orbit.size());
  if (!b.is_torus()) {
    BasePoint t = target;
    for (std::size_t i = 0; i < x_orbit.size(); ++i) {
      out.push_back(t);
      t = b.step(t);
    }
    return out;
  }
  const auto& T = b.torus();
  const Eigen::Vector2d w = ToralAutomorphism::difference(as_torus(x_orbit[0]), as_torus(target));
  Eigen::Matrix2d P;
  P << T.unstable_direction(), T.stable_direction();
  const double cs = (P.inverse() * w)(1);
  double scale = cs;
  for (const auto& x : x_orbit) {
    out.emplace_back(ToralAutomorphism::translate(as_torus(x), scale * T.stable_direction()));
    scale *= T.lambda_s();
  }
  return out;
}

namespace detail {

/// max_k w_k (d(z'_k, ref_k) - floor)_+ for the orbit of (base[0], y).
inline double shooting_objective(const Cocycle& A, const std::vector<BasePoint>& base, const FiberPoint& y,
                                 const std::vector<SkewPoint>& ref, const std::vector<double>& w, double floor) {
  double worst = 0;
  FiberPoint cur = y;
  for (std::size_t k = 0; k < base.size(); ++k) {
    const double d = std::max(A.base().distance(base[k], ref[k].base), fiber_distance(cur, ref[k].fiber));
    worst = std::max(worst, w[k] * std::max(0.0, d - floor));
    if (k + 1 < base.size()) cur = A(base[k]).eval(cur);
  }
  return worst;
}

/// Best fiber coordinate among the seeds, refined by coordinate descent on a
/// grid whose spacing halves from 1/64 down to 1e-10.
inline FiberPoint shoot(const Cocycle& A, const std::vector<BasePoint>& base, const std::vector<SkewPoint>& ref,
                        const std::vector<double>& w, double floor, const std::vector<FiberPoint>& seeds) {
  FiberPoint best = seeds.front();
  double fbest = INFINITY;
  for (const auto& s : seeds) {
    const double v = shooting_objective(A, base, s, ref, w, floor);
    if (v < fbest) {
      fbest = v;
      best = s;
    }
  }
  const int q = A.fiber_dim();
  for (double h = 1.0 / 64; h >= 1e-10 && fbest > 0; h *= 0.5) {
    for (int rounds = 0; rounds < 64; ++rounds) {
      bool moved = false;
      for (int a = 0; a < q; ++a)
        for (double sgn : {1.0, -1.0}) {
          FiberPoint c = best;
          c(a) = wrap01(c(a) + sgn * h);
          const double v = shooting_objective(A, base, c, ref, w, floor);
          if (v < fbest) {
            fbest = v;
            best = c;
            moved = true;
          }
        }
      if (!moved) break;
    }
  }
  return best;
}

inline std::pair<double, int> decay_rate(const std::vector<double>& d, const std::vector<double>& t, double floor) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > floor) {
      x.push_back(t[i]);
      y.push_back(std::log(d[i]));
    }
  if (x.size() < 2) return {std::numeric_limits<double>::infinity(), static_cast<int>(x.size())};
  return {-fit_line(x, y).second, static_cast<int>(x.size())};
}

}  // namespace detail

struct FakePoint {
  SkewPoint point;
  std::vector<SkewPoint> orbit;
  double distance = 0;      // d(z', z)
  double weighted = 0;      // max_k e^{k kappa} d(F^k z', F^k z), floor removed
  double certificate = 0;   // weighted / distance (hyperbolic) or its e^{-k eta} analogue (neutral)
  double base_rate = 0;     // fitted contraction of the base deviations
  double kappa_cert = 0;    // min(base rate, fiber contraction of the fake stable set)
  Vec fiber_rates;
  std::string mode;         // "hyperbolic" | "neutral"
};

namespace detail {

inline FakePoint fake_point_from(const Cocycle& A, const std::vector<SkewPoint>& ref,
                                 const std::vector<BasePoint>& target_orbit, const FakeSetParams& p,
                                 const std::vector<FiberPoint>& seeds, bool backward_weights) {
  const std::size_t H = target_orbit.size() - 1;
  std::vector<double> w(H + 1), wn(H + 1);
  for (std::size_t k = 0; k <= H; ++k) {
    const double t = static_cast<double>(backward_weights ? H - k : k);
    w[k] = std::exp(p.kappa * t);
    wn[k] = std::exp(-p.eta * t);
  }
  FakePoint fp;
  const FiberPoint y = shoot(A, target_orbit, ref, w, p.floor, seeds);
  fp.orbit = orbit_along(A, target_orbit, y);
  fp.point = fp.orbit.front();
  const std::size_t anchor = backward_weights ? H : 0;
  fp.distance = skew_distance(A.base(), fp.orbit[anchor], ref[anchor]);
  fp.weighted = shooting_objective(A, target_orbit, y, ref, w, p.floor);
  fp.fiber_rates = fiber_rates_along(A, fp.orbit, H / 2);
  fp.mode = fp.fiber_rates.cwiseAbs().maxCoeff() <= p.eta ? "neutral" : "hyperbolic";
  const double scale = fp.distance > 0 ? fp.distance : 1.0;
  fp.certificate = (fp.mode == "neutral" ? shooting_objective(A, target_orbit, y, ref, wn, p.floor) : fp.weighted) / scale;

  std::vector<double> dev, t;
  for (std::size_t k = 0; k <= H; ++k) {
    dev.push_back(A.base().distance(target_orbit[k], ref[k].base));
    t.push_back(static_cast<double>(backward_weights ? H - k : k));
  }
  fp.base_rate = decay_rate(dev, t, p.floor).first;
  if (!std::isfinite(fp.base_rate)) fp.base_rate = p.tau;
  fp.kappa_cert = fp.base_rate;
  double contracting = -INFINITY;
  for (int j = 0; j < fp.fiber_rates.size(); ++j)
    if (fp.fiber_rates(j) < -p.eta) contracting = std::max(contracting, fp.fiber_rates(j));
  if (std::isfinite(contracting) && !backward_weights) fp.kappa_cert = std::min(fp.kappa_cert, -contracting);
  if (!(fp.certificate <= p.C_tilde))
    throw Error(ErrorCode::NoStablePoint, "no fiber coordinate meets the contraction certificate (" +
                                              std::to_string(fp.certificate) + " > " + std::to_string(p.C_tilde) + ")");
  return fp;
}

}  // namespace detail

/// A point z' over `target_base` (on the local stable set of pr_1 z) whose
/// forward orbit follows that of z with exponentially weighted deviation
/// at most C~ d(z', z). Seeds: the fiber coordinate of z, and the pull-back
/// of F^horizon(z) along the target orbit; both are refined by shooting.
inline FakePoint fake_stable_point(const Cocycle& A, const SkewPoint& z, const BasePoint& target_base,
                                   const FakeSetParams& p, int horizon) {
  const auto& b = A.base();
  std::vector<BasePoint> xs{z.base};
  for (int k = 0; k < horizon; ++k) xs.push_back(b.step(xs.back()));
  const auto ref = orbit_along(A, xs, z.fiber);
  const auto target = stable_leaf_orbit(b, xs, target_base);
  const std::vector<FiberPoint> seeds{z.fiber, pull_back(A, target, ref.back().fiber)};
  return detail::fake_point_from(A, ref, target, p, seeds, false);
}

// ---------------------------------------------------------------- fiber closing

struct ShadowingResult {
  int n = 0;
  int base_period = 0;
  std::vector<SkewPoint> closed_orbit;  // z''_0 .. z''_n
  std::vector<double> deviations;       // d(z''_i, z_i)
  double gap = 0;                       // d(z_0, z_n)
  double rate_forward = 0, rate_backward = 0;
  double fitted_rate = 0;               // min of the two one-sided rates
  double bound_constant = 0;            // measured K: max dev_i / (gap e^{-kappa min(i, n-i)})
  bool bound_flagged = false;           // K > 2 max(ell, 2 C C~)
  double kappa = 0;
  Vec fiber_rates;                      // along z_0 .. z_n
  std::string mode;
  double base_orbit_defect = 0;         // max d(f(p_i), p_{i+1})
};

/// Closing of an almost-closed skew orbit segment z_0 .. z_n by one whose
/// base projection is a periodic orbit: base Anosov closing gives p and
/// x'_0 = [p, x_0]; a fake stable point over x'_0 follows z forward; a fake
/// unstable point over p follows that one backward from time n.
inline ShadowingResult fiber_close(const Cocycle& A, const SkewPoint& z0, int n, const FakeSetParams& p) {
  const auto& b = A.base();
  std::vector<BasePoint> xs{z0.base};
  for (int k = 0; k < n; ++k) xs.push_back(b.step(xs.back()));
  const auto ref = orbit_along(A, xs, z0.fiber);
  ShadowingResult r;
  r.n = n;
  r.kappa = p.kappa;
  r.gap = skew_distance(b, ref.front(), ref.back());
  if (!(r.gap < p.epsilon0))
    throw Error(ErrorCode::NotRecurrent, "d(z_0, F^n z_0) = " + std::to_string(r.gap) + " >= epsilon0");
  const ClosingResult cl = b.anosov_close(z0.base, n);
  r.base_period = cl.p.period;
  r.fiber_rates = fiber_rates_along(A, ref);
  r.mode = r.fiber_rates.cwiseAbs().maxCoeff() <= p.eta ? "neutral" : "hyperbolic";

  // (b) forward shadowing from x'_0 = [p, x_0]
  const auto& target = cl.y_orbit;
  const FakePoint zs = detail::fake_point_from(A, ref, target, p, {z0.fiber, pull_back(A, target, ref.back().fiber)},
                                               false);
  // (c) backward shadowing of z' by an orbit over p
  std::vector<BasePoint> ps;
  for (int i = 0; i <= n; ++i) ps.push_back(cl.p.orbit[static_cast<std::size_t>(i % n)]);
  for (int i = 0; i < n; ++i) r.base_orbit_defect = std::max(r.base_orbit_defect, b.distance(b.step(ps[static_cast<std::size_t>(i)]), ps[static_cast<std::size_t>(i + 1)]));
  const FakePoint zu = detail::fake_point_from(A, zs.orbit, ps, p,
                                               {zs.point.fiber, pull_back(A, ps, zs.orbit.back().fiber)}, true);
  r.closed_orbit = zu.orbit;

  std::vector<double> tf, df, tb, db;
  for (int i = 0; i <= n; ++i) {
    const double d = skew_distance(b, r.closed_orbit[static_cast<std::size_t>(i)], ref[static_cast<std::size_t>(i)]);
    r.deviations.push_back(d);
    if (2 * i <= n) {
      tf.push_back(i);
      df.push_back(d);
    }
    if (2 * i >= n) {
      tb.push_back(n - i);
      db.push_back(d);
    }
    const double env = r.gap * std::exp(-p.kappa * std::min(i, n - i));
    if (d > p.floor) r.bound_constant = std::max(r.bound_constant, d / env);
  }
  r.rate_forward = detail::decay_rate(df, tf, p.floor).first;
  r.rate_backward = detail::decay_rate(db, tb, p.floor).first;
  r.fitted_rate = std::min(r.rate_forward, r.rate_backward);
  r.bound_flagged = r.bound_constant > 2 * p.closing_K();
  return r;
}

// ---------------------------------------------------------------- local invariance

/// Smallest power of two C such that F maps every sampled point of
/// U(z_k, r^(k)/C) into U(z_{k+1}, r^(k+1)), U being the product of balls.
inline double calibrate_local_invariance(const Cocycle& A, const std::vector<SkewPoint>& orbit, FakeSetParams& p,
                                         CounterRng& rng, int samples = 100) {
  const auto& b = A.base();
  const int q = A.fiber_dim();
  const int steps = std::min(p.N0, static_cast<int>(orbit.size()) - 1);
  for (double C = 1; C <= 1 << 20; C *= 2) {
    bool ok = true;
    for (int k = 0; k < steps && ok; ++k) {
      const double rk = p.radius(k) / C, rk1 = p.radius(k + 1);
      for (int s = 0; s < samples && ok; ++s) {
        SkewPoint z{b.random_point_near(orbit[static_cast<std::size_t>(k)].base, rk, rng),
                    orbit[static_cast<std::size_t>(k)].fiber};
        z.fiber = wrap_fiber(z.fiber + rk * std::sqrt(rng.uniform()) * random_unit(q, rng));
        const SkewPoint fz = A.skew_step(z, 1);
        ok = skew_distance(b, fz, orbit[static_cast<std::size_t>(k + 1)]) < rk1;
      }
    }
    if (ok) {
      p.C = C;
      p.epsilon0 = std::min(p.epsilon0, p.r0 / p.closing_K());
      return C;
    }
  }
  throw Error(ErrorCode::NotConverged, "no local-invariance constant up to 2^20");
}

}  // namespace livsic
