#pragma once

// Transfer functions of coboundary cocycles, periodic obstructions and the
// classification of cocycles into coboundaries and obstructed ones.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "livsic/cocycle.hpp"
#include "livsic/parallel.hpp"
#include "livsic/spectral.hpp"

namespace livsic {

struct SolverOptions {
  double density = 0.02;
  std::size_t max_len = 4'000'000;
  int stride = 32;          // distance between stored table samples
  int grid = 0;             // fiber samples per axis (odd); 0 picks 65 for q = 1 and 17 for q = 2
  int holonomy_depth = -1;  // -1 picks it from the base contraction rate, 0 disables holonomy transport
  int p_max = 0;            // 0 picks 8 on the torus and 10 on the shift
  int p_exponents = 3;      // periods scanned for periodic exponents
  int exponent_reps = 1000;
  int fiber_starts = 4;
  double poc_tol = 1e-6;
  double exp_tol = 1e-2;
  int exp_n = 10000;
  int exp_starts = 10;
  double verify_tol = 1e-4;
  int verify_points = 100;
  int holder_pairs = 400;
  bool check_preconditions = true;
  std::uint64_t seed = 0;
  int workers = 1;

  int poc_grid(int q) const { return q == 1 ? 256 : 32; }
  int fiber_grid_size(int q) const { return grid > 0 ? grid : (q == 1 ? 65 : 17); }
  int period_cap(const BaseSystem& b) const { return p_max > 0 ? p_max : (b.is_torus() ? 8 : 10); }
};

namespace detail {

inline void push_jet(Jet& J, const Diffeo& g) {
  const Jet j = g.jet_lift(J.value);
  J.jacobian = j.jacobian * J.jacobian;
  J.value = j.value;
}

inline void pull_jet(Jet& J, const Diffeo& g) {
  const Vec z = g.solve_lift(J.value);
  J.jacobian = g.jet_lift(z).jacobian.inverse() * J.jacobian;
  J.value = z;
}

}  // namespace detail

/// A lift y -> M y + D(y) with integer matrix M and D periodic, stored as the
/// trigonometric interpolant of D on a G^q grid (G odd).
class SampledMap {
 public:
  SampledMap() = default;

  /// `values` are lifts at fiber_grid(q, G) followed by the lifts of e_1..e_q.
  SampledMap(int q, int G, const std::vector<Vec>& values) : q_(q), G_(G), h_((G - 1) / 2) {
    const auto pts = fiber_grid(q, G);
    M_ = Mat::Zero(q, q);
    for (int a = 0; a < q; ++a) M_.col(a) = (values[pts.size() + static_cast<std::size_t>(a)] - values[0]).array().round();
    const std::size_t K = static_cast<std::size_t>(2 * h_ + 1);
    const std::size_t n = pts.size();
    coef_.assign(static_cast<std::size_t>(q), std::vector<std::complex<double>>(q == 1 ? K : K * K));
    const auto omega = [G](long k, long a) { return std::polar(1.0, -two_pi * static_cast<double>(k * a) / G); };
    for (int c = 0; c < q; ++c) {
      std::vector<double> D(n);
      for (std::size_t g = 0; g < n; ++g) D[g] = values[g](c) - (M_.row(c) * pts[g])(0);
      auto& out = coef_[static_cast<std::size_t>(c)];
      if (q == 1) {
        for (long k = -h_; k <= h_; ++k) {
          std::complex<double> s = 0;
          for (long a = 0; a < G; ++a) s += D[static_cast<std::size_t>(a)] * omega(k, a);
          out[static_cast<std::size_t>(k + h_)] = s / static_cast<double>(G);
        }
      } else {
        // point (a/G, b/G) sits at index a G + b; transform over b, then a
        std::vector<std::complex<double>> T(static_cast<std::size_t>(G) * K);
        for (long a = 0; a < G; ++a)
          for (long k2 = -h_; k2 <= h_; ++k2) {
            std::complex<double> s = 0;
            for (long b = 0; b < G; ++b) s += D[static_cast<std::size_t>(a * G + b)] * omega(k2, b);
            T[static_cast<std::size_t>(a) * K + static_cast<std::size_t>(k2 + h_)] = s;
          }
        for (long k1 = -h_; k1 <= h_; ++k1)
          for (long k2 = -h_; k2 <= h_; ++k2) {
            std::complex<double> s = 0;
            for (long a = 0; a < G; ++a) s += T[static_cast<std::size_t>(a) * K + static_cast<std::size_t>(k2 + h_)] * omega(k1, a);
            out[static_cast<std::size_t>(k1 + h_) * K + static_cast<std::size_t>(k2 + h_)] = s / static_cast<double>(G * G);
          }
      }
    }
  }

  Jet jet(const Vec& y) const {
    Jet J{M_ * y, M_};
    const std::size_t K = static_cast<std::size_t>(2 * h_ + 1);
    std::vector<std::complex<double>> e1(K), e2(q_ == 2 ? K : 0);
    for (long k = -h_; k <= h_; ++k) {
      e1[static_cast<std::size_t>(k + h_)] = std::polar(1.0, two_pi * static_cast<double>(k) * y(0));
      if (q_ == 2) e2[static_cast<std::size_t>(k + h_)] = std::polar(1.0, two_pi * static_cast<double>(k) * y(1));
    }
    const std::complex<double> I(0, two_pi);
    for (int c = 0; c < q_; ++c) {
      const auto& cf = coef_[static_cast<std::size_t>(c)];
      if (q_ == 1) {
        std::complex<double> v = 0, d = 0;
        for (long k = -h_; k <= h_; ++k) {
          const auto t = cf[static_cast<std::size_t>(k + h_)] * e1[static_cast<std::size_t>(k + h_)];
          v += t;
          d += I * static_cast<double>(k) * t;
        }
        J.value(c) += v.real();
        J.jacobian(c, 0) += d.real();
      } else {
        std::complex<double> v = 0, d1 = 0, d2 = 0;
        for (long k1 = -h_; k1 <= h_; ++k1) {
          std::complex<double> row = 0, row_d2 = 0;
          for (long k2 = -h_; k2 <= h_; ++k2) {
            const auto t = cf[static_cast<std::size_t>(k1 + h_) * K + static_cast<std::size_t>(k2 + h_)] *
                           e2[static_cast<std::size_t>(k2 + h_)];
            row += t;
            row_d2 += I * static_cast<double>(k2) * t;
          }
          const auto e = e1[static_cast<std::size_t>(k1 + h_)];
          v += row * e;
          d1 += I * static_cast<double>(k1) * row * e;
          d2 += row_d2 * e;
        }
        J.value(c) += v.real();
        J.jacobian(c, 0) += d1.real();
        J.jacobian(c, 1) += d2.real();
      }
    }
    return J;
  }

 private:
  int q_ = 1, G_ = 1;
  long h_ = 0;
  Mat M_;
  std::vector<std::vector<std::complex<double>>> coef_;
};

/// u with u(x_0) = id and u(f^i x_0) = A^i(x_0) along a dense orbit segment.
/// Off the segment, u(x) is transported from the nearest table point x_i
/// along stable and unstable holonomies: with w = [x, x_i],
/// u(x) = A^m(f^-m x) A^m(f^-m w)^-1 A^n(w)^-1 u(f^n x_i).
class TransferFunction {
 public:
  TransferFunction(Cocycle A, std::vector<BasePoint> table, std::size_t segment_length, double density, int stride,
                   int grid, int depth)
      : A_(std::move(A)), table_(std::move(table)), segment_(segment_length), density_(density), stride_(stride),
        grid_(grid), depth_(depth) {
    const auto& b = A_.base();
    cell_ = density_ / 2;
    for (std::size_t i = 0; i < segment_; ++i) buckets_[b.cell_key(table_[i], cell_)].push_back(i);
    const int q = A_.fiber_dim();
    std::vector<Vec> pts = fiber_grid(q, grid_);
    for (int a = 0; a < q; ++a) pts.push_back(Vec::Unit(q, a));
    for (std::size_t i = 0; i < table_.size(); ++i) {
      if (i % static_cast<std::size_t>(stride_) == 0) samples_.emplace_back(q, grid_, pts);
      if (i + 1 < table_.size()) {
        const Diffeo g = A_(table_[i]);
        for (auto& p : pts) p = g.eval_lift(p);
      }
    }
  }

  const Cocycle& cocycle() const { return A_; }
  const BasePoint& anchor() const { return table_.front(); }
  const std::vector<BasePoint>& table() const { return table_; }
  std::size_t segment_length() const { return segment_; }
  std::size_t table_length() const { return table_.size(); }
  double density() const { return density_; }
  int holonomy_depth() const { return depth_; }
  HolderEstimate holder;

  /// u o g for a constant g: the same transfer function in another gauge.
  void set_gauge(Diffeo g) { gauge_ = std::move(g); }

  /// Post-composes table entry j with g (for testing the verifier).
  void corrupt(std::size_t j, Diffeo g) { corrupt_[j] = std::move(g); }

  /// u(f^j x_0) at the lift y.
  Jet entry(std::size_t j, const Vec& y) const {
    const std::size_t c = j / static_cast<std::size_t>(stride_);
    Jet J = samples_[c].jet(y);
    if (gauge_) {
      const Jet g = gauge_->jet_lift(y);
      J = samples_[c].jet(g.value);
      J.jacobian = J.jacobian * g.jacobian;
    }
    for (std::size_t k = c * static_cast<std::size_t>(stride_); k < j; ++k) detail::push_jet(J, A_(table_[k]));
    if (const auto it = corrupt_.find(j); it != corrupt_.end()) detail::push_jet(J, it->second);
    return J;
  }

  /// Index of the nearest table point of the dense segment, excluding `skip`.
  std::size_t nearest(const BasePoint& x, std::size_t skip = SIZE_MAX) const {
    const auto& b = A_.base();
    std::size_t best = SIZE_MAX;
    double bd = INFINITY;
    const auto scan = [&](std::int64_t key) {
      const auto it = buckets_.find(key);
      if (it == buckets_.end()) return;
      for (std::size_t i : it->second) {
        if (i == skip) continue;
        const double d = b.distance(x, table_[i]);
        if (d < bd) {
          bd = d;
          best = i;
        }
      }
    };
    const std::int64_t key = b.cell_key(x, cell_);
    if (b.is_torus()) {
      const auto n = static_cast<std::int64_t>(std::ceil(1.0 / cell_));
      const std::int64_t ci = key / n, cj = key % n;
      for (std::int64_t di = -1; di <= 1; ++di)
        for (std::int64_t dj = -1; dj <= 1; ++dj) scan(((ci + di + n) % n) * n + (cj + dj + n) % n);
    } else {
      scan(key);
    }
    if (best == SIZE_MAX)
      for (std::size_t i = 0; i < segment_; ++i)
        if (i != skip && b.distance(x, table_[i]) < bd) {
          bd = b.distance(x, table_[i]);
          best = i;
        }
    return best;
  }

  /// u(x) at the lift y, with its derivative.
  Jet jet(const BasePoint& x, const Vec& y) const {
    const auto& b = A_.base();
    const std::size_t i = nearest(x);
    if (depth_ == 0) return entry(i, y);
    const int n = depth_, m = depth_;
    const BasePoint w = b.bracket(x, table_[i]);
    Jet J = entry(i + static_cast<std::size_t>(n), y);
    std::vector<BasePoint> fw{w};
    for (int k = 1; k < n; ++k) fw.push_back(b.step(fw.back()));
    for (int k = n; k-- > 0;) detail::pull_jet(J, A_(fw[static_cast<std::size_t>(k)]));
    BasePoint bw = w, bx = x;
    std::vector<BasePoint> pw, px;  // f^-1 .. f^-m
    for (int k = 0; k < m; ++k) {
      bw = b.inverse_step(bw);
      bx = b.inverse_step(bx);
      pw.push_back(bw);
      px.push_back(bx);
    }
    for (int k = 0; k < m; ++k) detail::pull_jet(J, A_(pw[static_cast<std::size_t>(k)]));
    for (int k = m; k-- > 0;) detail::push_jet(J, A_(px[static_cast<std::size_t>(k)]));
    return J;
  }

  FiberPoint eval(const BasePoint& x, const FiberPoint& y) const { return wrap_fiber(jet(x, y).value); }

 private:
  Cocycle A_;
  std::vector<BasePoint> table_;
  std::size_t segment_;
  double density_, cell_ = 0;
  int stride_, grid_, depth_;
  std::vector<SampledMap> samples_;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> buckets_;
  std::unordered_map<std::size_t, Diffeo> corrupt_;
  std::optional<Diffeo> gauge_;
};

// ---------------------------------------------------------------- obstructions

struct ExponentRecord {
  FiberPoint y;
  Vec exponents;             // (1/period) log sigma_j, descending
  bool fixed_point = false;  // y is fixed by A^period(p)
  int reps = 1;
};

/// Return map A^period(p) as a composition tree.
inline Diffeo return_map(const Cocycle& A, const PeriodicOrbit& p) {
  Diffeo g = Diffeo::identity(A.fiber_dim());
  for (const auto& x : p.orbit) g = compose(A(x), g);
  return g;
}

/// Fixed points of a circle map on the cover: sign changes of g(y) - y - k
/// on a grid, refined by bisection.
inline std::vector<double> circle_fixed_points(const Diffeo& g, int grid = 512) {
  std::vector<double> out;
  const auto D = [&](double y) { return g.eval_lift(Vec::Constant(1, y))(0) - y; };
  double y0 = 0, d0 = D(0);
  for (int i = 1; i <= grid; ++i) {
    const double y1 = static_cast<double>(i) / grid, d1 = D(y1);
    const double lo = std::min(d0, d1), hi = std::max(d0, d1);
    for (double k = std::ceil(lo); k <= hi; k += 1) {
      if (d0 == k) {
        if (i == 1 || out.empty() || out.back() != y0) out.push_back(y0);
        continue;
      }
      if (d1 == k) continue;  // picked up as the left end of the next cell
      double a = y0, bnd = y1;
      const bool rising = d0 < k;
      for (int it = 0; it < 200 && bnd - a > 1e-16; ++it) {
        const double mid = 0.5 * (a + bnd);
        ((D(mid) - k < 0) == rising ? a : bnd) = mid;
      }
      out.push_back(0.5 * (a + bnd));
    }
    y0 = y1;
    d0 = d1;
  }
  if (!out.empty() && out.back() >= 1.0) out.pop_back();
  return out;
}

inline ExponentRecord exponent_at(const Cocycle& A, const PeriodicOrbit& p, const FiberPoint& y, int reps,
                                  bool fixed) {
  ExponentRecord r{y, Vec(), fixed, fixed ? 1 : reps};
  ScaledMatrix prod = ScaledMatrix::identity(A.fiber_dim());
  FiberPoint cur = y;
  for (int rep = 0; rep < r.reps; ++rep)
    for (const auto& x : p.orbit) {
      const Diffeo g = A(x);
      prod = prod.left_multiplied(g.deriv(cur));
      cur = g.eval(cur);
    }
  r.exponents = prod.log_singular_values() / static_cast<double>(p.period * r.reps);
  return r;
}

/// Exponents of the return map at its fixed points (q = 1) and at
/// `fiber_starts` further fiber points, the latter along `reps` repetitions.
inline std::vector<ExponentRecord> periodic_exponents(const Cocycle& A, const PeriodicOrbit& p, int fiber_starts,
                                                      int reps = 1000, std::uint64_t seed = 0) {
  std::vector<ExponentRecord> out;
  if (A.fiber_dim() == 1)
    for (double y : circle_fixed_points(return_map(A, p))) out.push_back(exponent_at(A, p, Vec::Constant(1, y), 1, true));
  CounterRng rng(seed, 0x9e3779b9);
  for (int s = 0; s < fiber_starts; ++s) {
    Vec y(A.fiber_dim());
    for (int a = 0; a < y.size(); ++a) y(a) = rng.uniform();
    out.push_back(exponent_at(A, p, y, reps, false));
  }
  return out;
}

struct ObstructionWitness {
  std::string kind;  // "poc" | "periodic-exponent" | "fibered-exponent"
  double value = 0;  // the residual or max |exponent| that exceeded its tolerance
  double tolerance = 0;
  PeriodicOrbit orbit;
  PocResidual poc;
  ExponentRecord exponent;
  SkewPoint start;   // fibered-exponent witnesses
  int n = 0;         // fibered-exponent horizon
};

/// Recomputes a witness value from scratch.
inline double replay_witness(const Cocycle& A, const ObstructionWitness& w, const SolverOptions& o = {}) {
  if (w.kind == "poc") return A.poc_residual(w.orbit, o.poc_grid(A.fiber_dim())).c1;
  if (w.kind == "periodic-exponent")
    return exponent_at(A, w.orbit, w.exponent.y, w.exponent.reps, w.exponent.fixed_point).exponents.cwiseAbs().maxCoeff();
  return exponent_estimate(A, w.start, w.n, o.exp_tol, false).all.cwiseAbs().maxCoeff();
}

struct ScanReport {
  double poc_max = 0;                 // C^1 residual
  double poc_c0_max = 0;
  int orbits = 0;
  double periodic_exponent_max = 0;
  double fibered_exponent_max = 0;
  std::vector<double> fibered;        // max |exponent| per random start
  std::vector<ObstructionWitness> witnesses;
};

/// POC residuals on Fix(f^n), n <= p_max; periodic exponents for
/// n <= p_exponents; fibered exponents from exp_starts random starts.
/// Witnesses: the worst orbit per period for each violated check.
inline ScanReport obstruction_scan(const Cocycle& A, const SolverOptions& o) {
  ScanReport rep;
  const auto& b = A.base();
  const int q = A.fiber_dim();
  for (int n = 1; n <= o.period_cap(b); ++n) {
    const auto orbits = b.periodic_points(n);
    const auto res = parallel_map(orbits.size(), o.workers, [&](std::size_t i) {
      return A.poc_residual(orbits[i], o.poc_grid(q));
    });
    std::size_t worst = 0;
    for (std::size_t i = 0; i < res.size(); ++i) {
      rep.poc_c0_max = std::max(rep.poc_c0_max, res[i].c0);
      if (res[i].c1 > res[worst].c1) worst = i;
    }
    rep.orbits += static_cast<int>(orbits.size());
    if (!res.empty()) {
      rep.poc_max = std::max(rep.poc_max, res[worst].c1);
      if (res[worst].c1 > o.poc_tol) {
        ObstructionWitness w;
        w.kind = "poc";
        w.value = res[worst].c1;
        w.tolerance = o.poc_tol;
        w.orbit = orbits[worst];
        w.poc = res[worst];
        rep.witnesses.push_back(w);
      }
    }
    if (n > o.p_exponents) continue;
    const auto ex = parallel_map(orbits.size(), o.workers, [&](std::size_t i) {
      auto recs = periodic_exponents(A, orbits[i], o.fiber_starts, o.exponent_reps, o.seed + i);
      ExponentRecord best = recs.front();
      for (const auto& r : recs)
        if (r.exponents.cwiseAbs().maxCoeff() > best.exponents.cwiseAbs().maxCoeff()) best = r;
      return best;
    });
    std::size_t wi = 0;
    for (std::size_t i = 0; i < ex.size(); ++i)
      if (ex[i].exponents.cwiseAbs().maxCoeff() > ex[wi].exponents.cwiseAbs().maxCoeff()) wi = i;
    if (!ex.empty()) {
      const double v = ex[wi].exponents.cwiseAbs().maxCoeff();
      rep.periodic_exponent_max = std::max(rep.periodic_exponent_max, v);
      if (v > o.exp_tol) {
        ObstructionWitness w;
        w.kind = "periodic-exponent";
        w.value = v;
        w.tolerance = o.exp_tol;
        w.orbit = orbits[wi];
        w.exponent = ex[wi];
        rep.witnesses.push_back(w);
      }
    }
  }
  const auto starts = parallel_map(static_cast<std::size_t>(o.exp_starts), o.workers, [&](std::size_t s) {
    CounterRng rng(o.seed, 1000 + s);
    SkewPoint z{b.random_point(rng), Vec(q)};
    for (int a = 0; a < q; ++a) z.fiber(a) = rng.uniform();
    return std::make_pair(z, exponent_estimate(A, z, o.exp_n, o.exp_tol, false).all.cwiseAbs().maxCoeff());
  });
  std::size_t ws = 0;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    rep.fibered.push_back(starts[s].second);
    if (starts[s].second > starts[ws].second) ws = s;
  }
  if (!starts.empty()) {
    rep.fibered_exponent_max = starts[ws].second;
    if (rep.fibered_exponent_max > o.exp_tol) {
      ObstructionWitness w;
      w.kind = "fibered-exponent";
      w.value = rep.fibered_exponent_max;
      w.tolerance = o.exp_tol;
      w.start = starts[ws].first;
      w.n = o.exp_n;
      rep.witnesses.push_back(w);
    }
  }
  return rep;
}

// ---------------------------------------------------------------- solve and verify

/// Hoelder fit of u from near-return pairs (i, j) of the table.
inline HolderEstimate table_holder(const TransferFunction& u, int pairs, std::uint64_t seed) {
  HolderEstimate h;
  const int q = u.cocycle().fiber_dim();
  const auto ys = fiber_grid(q, q == 1 ? 16 : 4);
  CounterRng rng(seed, 0x401de7);
  std::vector<double> lx, ly;
  const auto& b = u.cocycle().base();
  for (int s = 0; s < pairs; ++s) {
    const std::size_t i = rng.below(u.segment_length());
    const std::size_t j = u.nearest(u.table()[i], i);
    const double d = b.distance(u.table()[i], u.table()[j]);
    double du = 0;
    for (const auto& y : ys) du = std::max(du, fiber_distance(u.entry(i, y).value, u.entry(j, y).value));
    if (d > 0 && du > 1e-14) {
      lx.push_back(std::log(d));
      ly.push_back(std::log(du));
      h.max_ratio = std::max(h.max_ratio, du / d);
    }
  }
  h.pairs = static_cast<int>(lx.size());
  if (lx.size() < 2) {
    h.degenerate = true;
    h.beta_fit = 1;
    return h;
  }
  const auto [a, slope] = fit_line(lx, ly);
  h.K = std::exp(a);
  h.beta_fit = slope;
  return h;
}

inline int default_holonomy_depth(const BaseSystem& b, double density) {
  return static_cast<int>(std::ceil(std::log(density / 1e-10) / b.hyperbolicity().tau));
}

/// Transfer function of a coboundary, gauge-fixed at the start of a dense
/// orbit segment. With check_preconditions, POC and exponent scans run first.
inline TransferFunction solve(const Cocycle& A, const SolverOptions& o = {}) {
  if (o.check_preconditions) {
    const auto scan = obstruction_scan(A, o);
    for (const auto& w : scan.witnesses) {
      if (w.kind == "poc")
        throw Error(ErrorCode::PocViolated, "POC residual " + std::to_string(w.value) + " on a period-" +
                                                std::to_string(w.orbit.period) + " orbit");
      throw Error(ErrorCode::ExponentNonzero, w.kind + " " + std::to_string(w.value));
    }
  }
  const auto& b = A.base();
  auto seg = b.transitive_segment(o.density, o.max_len);
  const std::size_t L = seg.size();
  const int depth = o.holonomy_depth >= 0 ? o.holonomy_depth : default_holonomy_depth(b, o.density);
  for (int k = 0; k < depth; ++k) seg.push_back(b.step(seg.back()));
  int G = o.fiber_grid_size(A.fiber_dim());
  if (G % 2 == 0) ++G;
  TransferFunction u(A, std::move(seg), L, o.density, o.stride, G, depth);
  u.holder = table_holder(u, o.holder_pairs, o.seed);
  return u;
}

struct VerificationReport {
  double c0 = 0;            // sup |A(x) u(x) y - u(fx) y|
  double c1 = 0;            // sup |D(A(x) u(x))(y) - Du(fx)(y)|
  double tolerance = 0;
  int points = 0;
  int worst_index = -1;
  std::array<double, 2> worst_coords{0, 0};
  bool passed = false;
};

/// Checks A(x) o u(x) = u(fx) at random base points over a fiber grid. The
/// identity is tested in this pushed-forward form, which avoids inverting
/// the sampled u(x).
inline VerificationReport verify_coboundary(const TransferFunction& u, const Cocycle& A, int test_points,
                                            std::uint64_t seed = 0, int workers = 1, double tol = 1e-4) {
  const auto& b = A.base();
  const int q = A.fiber_dim();
  const auto ys = fiber_grid(q, q == 1 ? 64 : 8);
  struct Point {
    double c0 = 0, c1 = 0;
    std::array<double, 2> coords{0, 0};
  };
  const auto res = parallel_map(static_cast<std::size_t>(test_points), workers, [&](std::size_t t) {
    CounterRng rng(seed, 0x7e57 + t);
    const BasePoint x = b.random_point(rng);
    const BasePoint fx = b.step(x);
    const Diffeo g = A(x);
    Point p;
    p.coords = b.coords(x);
    for (const auto& y : ys) {
      Jet lhs = u.jet(x, y);
      detail::push_jet(lhs, g);
      const Jet rhs = u.jet(fx, y);
      p.c0 = std::max(p.c0, fiber_distance(lhs.value, rhs.value));
      p.c1 = std::max(p.c1, op_norm(lhs.jacobian - rhs.jacobian));
    }
    return p;
  });
  VerificationReport r;
  r.points = test_points;
  r.tolerance = tol;
  for (std::size_t t = 0; t < res.size(); ++t) {
    if (res[t].c0 > r.c0) {
      r.worst_index = static_cast<int>(t);
      r.worst_coords = res[t].coords;
    }
    r.c0 = std::max(r.c0, res[t].c0);
    r.c1 = std::max(r.c1, res[t].c1);
  }
  r.passed = r.c0 <= tol;
  return r;
}

/// Verification at table points whose successor is also a table point:
/// x = f^j x_0 uses u(x) = entry j and u(fx) = entry j+1.
inline double verify_at_table(const TransferFunction& u, std::size_t j) {
  const Diffeo g = u.cocycle()(u.table()[j]);
  double worst = 0;
  for (const auto& y : fiber_grid(u.cocycle().fiber_dim(), 32)) {
    Jet lhs = u.jet(u.table()[j], y);
    detail::push_jet(lhs, g);
    worst = std::max(worst, fiber_distance(lhs.value, u.jet(u.table()[j + 1], y).value));
  }
  return worst;
}

// ---------------------------------------------------------------- classify

struct Classification {
  std::string verdict;  // "coboundary" | "obstruction"
  bool marginal = false;
  std::string reason;
  ScanReport scan;
  std::optional<VerificationReport> residual;
  std::optional<TransferFunction> u;
  std::size_t table_length = 0;
  double density = 0;
  double verify_tol = 0;
};

/// A value is marginal when scaling its tolerance by a factor within
/// [1/10, 10] would flip the decision.
inline bool marginal_value(double v, double tol) { return v > tol / 10 && v <= tol * 10; }

inline Classification classify(const Cocycle& A, const SolverOptions& o = {}) {
  Classification c;
  c.density = o.density;
  c.scan = obstruction_scan(A, o);
  c.marginal = marginal_value(c.scan.poc_max, o.poc_tol) || marginal_value(c.scan.periodic_exponent_max, o.exp_tol) ||
               marginal_value(c.scan.fibered_exponent_max, o.exp_tol);
  if (!c.scan.witnesses.empty()) {
    c.verdict = "obstruction";
    c.reason = c.scan.witnesses.front().kind;
    return c;
  }
  SolverOptions so = o;
  so.check_preconditions = false;
  TransferFunction u = solve(A, so);
  c.table_length = u.segment_length();
  const double beta = u.holder.degenerate ? 1.0 : std::clamp(u.holder.beta_fit, 0.0, 1.0);
  c.verify_tol = o.verify_tol * std::pow(o.density / 0.02, beta);
  c.residual = verify_coboundary(u, A, o.verify_points, o.seed, o.workers, c.verify_tol);
  c.u.emplace(std::move(u));
  if (c.residual->passed) {
    c.verdict = "coboundary";
    c.reason = "verified";
    c.marginal = c.marginal || marginal_value(c.residual->c0, c.verify_tol);
  } else {
    c.verdict = "obstruction";
    c.marginal = true;
    c.reason = "verification residual above tolerance";
  }
  return c;
}

}  // namespace livsic
