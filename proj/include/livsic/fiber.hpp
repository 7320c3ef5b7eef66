#pragma once

// Diffeomorphisms of the flat fiber N = R^q / Z^q (q = 1 or 2), represented
// as immutable composition trees over closed-form generators, and the
// grid-sampled C^0 / C^1 / C^{1+beta} distances between them.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "livsic/error.hpp"
#include "livsic/linalg.hpp"

namespace livsic {

using FiberPoint = Vec;

inline double wrap01(double v) {
  double r = v - std::floor(v);
  return r >= 1.0 ? 0.0 : r;
}

inline FiberPoint wrap_fiber(const Vec& lift) {
  FiberPoint y(lift.size());
  for (int i = 0; i < lift.size(); ++i) y(i) = wrap01(lift(i));
  return y;
}

/// Shortest representative of a - b modulo Z^q.
inline Vec fiber_difference(const Vec& a, const Vec& b) {
  Vec d = a - b;
  for (int i = 0; i < d.size(); ++i) d(i) -= std::nearbyint(d(i));
  return d;
}

inline double fiber_distance(const Vec& a, const Vec& b) { return fiber_difference(a, b).norm(); }

class Diffeo;

namespace detail {

enum class NodeKind { Translation, Shear, Linear, Compose, Inverse };

struct DiffeoNode {
  NodeKind kind = NodeKind::Compose;
  int q = 1;
  std::size_t size = 0;
  Vec v;                         // translation vector
  double a = 0;                  // shear amplitude
  std::array<int, 2> k{0, 0};    // shear wave vector
  int axis = 0;                  // shear displacement axis
  Mat L;                         // linear part (integer entries)
  std::vector<Diffeo> factors;   // compose: applied first to last
  std::shared_ptr<const DiffeoNode> child;  // inverse
};

}  // namespace detail

struct Jet {
  Vec value;
  Mat jacobian;
};

class Diffeo {
 public:
  Diffeo() : Diffeo(identity(1)) {}

  static Diffeo identity(int q) {
    check_dim(q);
    auto n = std::make_shared<detail::DiffeoNode>();
    n->kind = detail::NodeKind::Compose;
    n->q = q;
    return Diffeo(std::move(n));
  }

  static Diffeo translation(const Vec& v) {
    check_dim(static_cast<int>(v.size()));
    auto n = std::make_shared<detail::DiffeoNode>();
    n->kind = detail::NodeKind::Translation;
    n->q = static_cast<int>(v.size());
    n->v = v;
    n->size = 1;
    return Diffeo(std::move(n));
  }

  static Diffeo rotation(double theta) {
    Vec v(1);
    v(0) = theta;
    return translation(v);
  }

  /// x -> x + (a / 2pi) sin(2pi <k, x>) e_axis; a diffeomorphism iff |a k_axis| < 1.
  static Diffeo shear(int q, double a, std::array<int, 2> k = {1, 0}, int axis = 0) {
    check_dim(q);
    if (axis < 0 || axis >= q) throw Error(ErrorCode::ConfigInvalid, "shear axis out of range");
    if (q == 1) k[1] = 0;
    if (!(std::abs(a * k[static_cast<std::size_t>(axis)]) < 1.0))
      throw Error(ErrorCode::ConfigInvalid, "shear needs |a * k_axis| < 1");
    auto n = std::make_shared<detail::DiffeoNode>();
    n->kind = detail::NodeKind::Shear;
    n->q = q;
    n->a = a;
    n->k = k;
    n->axis = axis;
    n->size = 1;
    return Diffeo(std::move(n));
  }

  /// Linear automorphism of T^2 with integer entries and determinant +1.
  static Diffeo linear(const Mat& L) {
    if (L.rows() != 2 || L.cols() != 2)
      throw Error(ErrorCode::ConfigInvalid, "linear fiber maps need a 2x2 matrix");
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        if (L(i, j) != std::nearbyint(L(i, j))) throw Error(ErrorCode::ConfigInvalid, "linear map must be integral");
    if (std::nearbyint(L.determinant()) != 1.0)
      throw Error(ErrorCode::ConfigInvalid, "linear map must have determinant +1");
    auto n = std::make_shared<detail::DiffeoNode>();
    n->kind = detail::NodeKind::Linear;
    n->q = 2;
    n->L = L;
    n->size = 1;
    return Diffeo(std::move(n));
  }

  int dim() const { return node_->q; }
  std::size_t size() const { return node_->size; }
  const detail::DiffeoNode& node() const { return *node_; }
  bool is_identity() const { return node_->kind == detail::NodeKind::Compose && node_->factors.empty(); }

  /// outer o inner
  friend Diffeo compose(const Diffeo& outer, const Diffeo& inner) {
    if (outer.dim() != inner.dim()) throw Error(ErrorCode::PreconditionViolated, "compose: dimension mismatch");
    if (outer.is_identity()) return inner;
    if (inner.is_identity()) return outer;
    auto n = std::make_shared<detail::DiffeoNode>();
    n->kind = detail::NodeKind::Compose;
    n->q = outer.dim();
    inner.append_factors(n->factors);
    outer.append_factors(n->factors);
    for (const auto& f : n->factors) n->size += f.size();
    return Diffeo(std::move(n));
  }

  /// Formal inverse, pushed down to the leaves.
  Diffeo inverse() const {
    const auto& n = *node_;
    switch (n.kind) {
      case detail::NodeKind::Translation: return translation(-n.v);
      case detail::NodeKind::Linear: {
        Mat inv(2, 2);
        inv << n.L(1, 1), -n.L(0, 1), -n.L(1, 0), n.L(0, 0);
        return linear(inv);
      }
      case detail::NodeKind::Inverse: return Diffeo(n.child);
      case detail::NodeKind::Shear: {
        if (n.k[static_cast<std::size_t>(n.axis)] == 0) {
          // the phase is unchanged by the shear, so the inverse is explicit
          return shear(n.q, -n.a, n.k, n.axis);
        }
        auto m = std::make_shared<detail::DiffeoNode>();
        m->kind = detail::NodeKind::Inverse;
        m->q = n.q;
        m->size = n.size;
        m->child = node_;
        return Diffeo(std::move(m));
      }
      case detail::NodeKind::Compose: {
        if (n.factors.empty()) return *this;
        auto m = std::make_shared<detail::DiffeoNode>();
        m->kind = detail::NodeKind::Compose;
        m->q = n.q;
        m->size = n.size;
        for (auto it = n.factors.rbegin(); it != n.factors.rend(); ++it) m->factors.push_back(it->inverse());
        return Diffeo(std::move(m));
      }
    }
    return *this;
  }

  /// Value on the universal cover; commutes with integer translations.
  Vec eval_lift(const Vec& x) const { return eval_node(*node_, x); }

  Jet jet_lift(const Vec& x) const {
    Jet j{x, Mat::Identity(dim(), dim())};
    jet_node(*node_, j);
    return j;
  }

  FiberPoint eval(const FiberPoint& y) const { return wrap_fiber(eval_lift(y)); }
  Mat deriv(const FiberPoint& y) const { return jet_lift(y).jacobian; }

  /// Solve g(z) = x on the cover. q = 1: Newton on the monotone lift,
  /// safeguarded by bisection; q = 2: damped Newton.
  Vec solve_lift(const Vec& x) const { return solve_node(*node_, x); }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    describe_node(*node_, os);
    return os.str();
  }

 private:
  explicit Diffeo(std::shared_ptr<const detail::DiffeoNode> n) : node_(std::move(n)) {}

  static void check_dim(int q) {
    if (q != 1 && q != 2) throw Error(ErrorCode::ConfigInvalid, "fiber dimension must be 1 or 2");
  }

  void append_factors(std::vector<Diffeo>& out) const {
    if (node_->kind == detail::NodeKind::Compose) out.insert(out.end(), node_->factors.begin(), node_->factors.end());
    else out.push_back(*this);
  }

  static double phase(const detail::DiffeoNode& n, const Vec& x) {
    double p = n.k[0] * x(0);
    if (n.q == 2) p += n.k[1] * x(1);
    return two_pi * p;
  }

  static Vec eval_node(const detail::DiffeoNode& n, const Vec& x) {
    switch (n.kind) {
      case detail::NodeKind::Translation: return x + n.v;
      case detail::NodeKind::Shear: {
        Vec y = x;
        y(n.axis) += n.a / two_pi * std::sin(phase(n, x));
        return y;
      }
      case detail::NodeKind::Linear: return n.L * x;
      case detail::NodeKind::Compose: {
        Vec y = x;
        for (const auto& f : n.factors) y = eval_node(*f.node_, y);
        return y;
      }
      case detail::NodeKind::Inverse: return solve_node(*n.child, x);
    }
    return x;
  }

  static void jet_node(const detail::DiffeoNode& n, Jet& j) {
    switch (n.kind) {
      case detail::NodeKind::Translation: j.value += n.v; return;
      case detail::NodeKind::Shear: {
        const double ph = phase(n, j.value);
        Mat d = Mat::Identity(n.q, n.q);
        const double c = n.a * std::cos(ph);
        for (int i = 0; i < n.q; ++i) d(n.axis, i) += c * n.k[static_cast<std::size_t>(i)];
        j.value(n.axis) += n.a / two_pi * std::sin(ph);
        j.jacobian = d * j.jacobian;
        return;
      }
      case detail::NodeKind::Linear:
        j.value = n.L * j.value;
        j.jacobian = n.L * j.jacobian;
        return;
      case detail::NodeKind::Compose:
        for (const auto& f : n.factors) jet_node(*f.node_, j);
        return;
      case detail::NodeKind::Inverse: {
        const Vec z = solve_node(*n.child, j.value);
        Jet c{z, Mat::Identity(n.q, n.q)};
        jet_node(*n.child, c);
        j.value = z;
        j.jacobian = c.jacobian.inverse() * j.jacobian;
        return;
      }
    }
  }

  static Vec solve_node(const detail::DiffeoNode& n, const Vec& x) {
    constexpr double kResidual = 1e-12;
    if (n.kind == detail::NodeKind::Translation) return x - n.v;
    if (n.kind == detail::NodeKind::Inverse) return eval_node(*n.child, x);
    if (n.kind == detail::NodeKind::Linear) {
      Mat inv(2, 2);
      inv << n.L(1, 1), -n.L(0, 1), -n.L(1, 0), n.L(0, 0);
      return inv * x;
    }
    if (n.kind == detail::NodeKind::Compose) {
      Vec z = x;
      for (auto it = n.factors.rbegin(); it != n.factors.rend(); ++it) z = solve_node(*it->node_, z);
      return z;
    }
    if (n.q == 1) {
      const double target = x(0);
      auto g = [&](double z) {
        Vec zz(1);
        zz(0) = z;
        return eval_node(n, zz)(0) - target;
      };
      // bracket the root of the increasing function g
      double lo = target - 0.5, hi = target + 0.5;
      double flo = g(lo), fhi = g(hi);
      for (int it = 0; it < 64 && flo > 0; ++it) {
        lo -= std::ldexp(1.0, it);
        flo = g(lo);
      }
      for (int it = 0; it < 64 && fhi < 0; ++it) {
        hi += std::ldexp(1.0, it);
        fhi = g(hi);
      }
      if (flo > 0 || fhi < 0) throw Error(ErrorCode::InversionDiverged, "no sign change bracketing the preimage");
      double z = 0.5 * (lo + hi);
      for (int it = 0; it < 200; ++it) {
        Jet jz{Vec::Constant(1, z), Mat::Identity(1, 1)};
        jet_node(n, jz);
        const double fz = jz.value(0) - target;
        if (fz == 0.0) return Vec::Constant(1, z);
        if (fz < 0) lo = z;
        else hi = z;
        double next = z - fz / jz.jacobian(0, 0);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - z) <= 1e-16 * std::max(1.0, std::abs(z)) || hi - lo <= 1e-16 * std::max(1.0, std::abs(z))) {
          z = next;
          break;
        }
        z = next;
      }
      const double res = std::abs(g(z));
      if (!(res <= kResidual))
        throw Error(ErrorCode::InversionDiverged, "circle inversion residual " + std::to_string(res));
      return Vec::Constant(1, z);
    }
    // q = 2
    Vec z = x - (eval_node(n, x) - x);
    double rnorm = (eval_node(n, z) - x).norm();
    for (int it = 0; it < 100 && rnorm > 1e-15; ++it) {
      Jet jz{z, Mat::Identity(2, 2)};
      jet_node(n, jz);
      const Vec r = jz.value - x;
      const Vec stepv = jz.jacobian.inverse() * r;
      double t = 1.0;
      Vec cand = z - stepv;
      double cn = (eval_node(n, cand) - x).norm();
      for (int h = 0; h < 40 && !(cn < rnorm); ++h) {
        t *= 0.5;
        cand = z - t * stepv;
        cn = (eval_node(n, cand) - x).norm();
      }
      if (!(cn < rnorm)) break;
      z = cand;
      rnorm = cn;
    }
    if (!(rnorm <= kResidual))
      throw Error(ErrorCode::InversionDiverged, "torus inversion residual " + std::to_string(rnorm));
    return z;
  }

  static void describe_node(const detail::DiffeoNode& n, std::ostringstream& os) {
    switch (n.kind) {
      case detail::NodeKind::Translation:
        os << "T(";
        for (int i = 0; i < n.v.size(); ++i) os << (i ? "," : "") << n.v(i);
        os << ")";
        return;
      case detail::NodeKind::Shear:
        os << "S(" << n.a << ";" << n.k[0] << "," << n.k[1] << ";" << n.axis << ")";
        return;
      case detail::NodeKind::Linear:
        os << "L(" << n.L(0, 0) << "," << n.L(0, 1) << "," << n.L(1, 0) << "," << n.L(1, 1) << ")";
        return;
      case detail::NodeKind::Inverse:
        os << "Inv(";
        describe_node(*n.child, os);
        os << ")";
        return;
      case detail::NodeKind::Compose:
        if (n.factors.empty()) {
          os << "Id";
          return;
        }
        os << "[";
        for (std::size_t i = 0; i < n.factors.size(); ++i) {
          if (i) os << " ; ";
          describe_node(*n.factors[i].node_, os);
        }
        os << "]";
        return;
    }
  }

  std::shared_ptr<const detail::DiffeoNode> node_;
};

/// Uniform grid of the fiber: per_dim^q points.
inline std::vector<FiberPoint> fiber_grid(int q, int per_dim) {
  std::vector<FiberPoint> pts;
  if (q == 1) {
    for (int i = 0; i < per_dim; ++i) pts.push_back(Vec::Constant(1, static_cast<double>(i) / per_dim));
  } else {
    for (int i = 0; i < per_dim; ++i)
      for (int j = 0; j < per_dim; ++j) {
        Vec p(2);
        p << static_cast<double>(i) / per_dim, static_cast<double>(j) / per_dim;
        pts.push_back(p);
      }
  }
  return pts;
}

struct DiffeoDistanceReport {
  double d_c0 = 0;
  double d_c1 = 0;
  double d_c1beta = 0;
  int grid = 0;
  double beta = 1;
  bool far = false;  // charts incompatible: the +1 fallback was used
};

namespace detail {

/// max ||D(g o h^-1)(y) - I|| over the grid, plus the matrices for the seminorm.
inline std::vector<Mat> relative_derivative_field(const Diffeo& g, const Diffeo& h,
                                                  const std::vector<FiberPoint>& grid) {
  std::vector<Mat> out;
  out.reserve(grid.size());
  for (const auto& y : grid) {
    const Vec z = h.solve_lift(y);
    const Mat dh = h.jet_lift(z).jacobian;
    const Mat dg = g.jet_lift(z).jacobian;
    out.push_back(dg * dh.inverse());
  }
  return out;
}

inline double holder_seminorm(const std::vector<FiberPoint>& grid, const std::vector<Mat>& field, double beta) {
  double best = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      const double d = fiber_distance(grid[i], grid[j]);
      if (d > 0.25 || d == 0.0) continue;
      best = std::max(best, op_norm(field[i] - field[j]) / std::pow(d, beta));
    }
  return best;
}

}  // namespace detail

/// Grid-sampled distances. The C^1 part measures D(g h^-1) and D(h g^-1)
/// against the identity so that distance(g, g) = 0. When the maps are not
/// C^0-close (d_c0 > 0.25) the chart-compatible form is unavailable and
/// d_c1 = d_c0 + 1, d_c1beta = d_c1 + 1.
inline DiffeoDistanceReport distance(const Diffeo& g, const Diffeo& h, double beta = 1.0, int grid = 256) {
  if (!(beta > 0 && beta <= 1)) throw Error(ErrorCode::PreconditionViolated, "beta must lie in (0, 1]");
  if (grid < 16) throw Error(ErrorCode::PreconditionViolated, "grid must be >= 16");
  if (g.dim() != h.dim()) throw Error(ErrorCode::PreconditionViolated, "distance: dimension mismatch");
  const int q = g.dim();
  DiffeoDistanceReport r;
  r.grid = grid;
  r.beta = beta;
  const auto pts = fiber_grid(q, grid);
  for (const auto& y : pts) r.d_c0 = std::max(r.d_c0, fiber_distance(g.eval_lift(y), h.eval_lift(y)));
  if (r.d_c0 > 0.25) {
    r.far = true;
    r.d_c1 = r.d_c0 + 1.0;
    r.d_c1beta = r.d_c1 + 1.0;
    return r;
  }
  const Mat id = Mat::Identity(q, q);
  const auto f1 = detail::relative_derivative_field(g, h, pts);
  const auto f2 = detail::relative_derivative_field(h, g, pts);
  double m1 = 0, m2 = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m1 = std::max(m1, op_norm(f1[i] - id));
    m2 = std::max(m2, op_norm(f2[i] - id));
  }
  r.d_c1 = r.d_c0 + (m1 + m2);  // grouped so that distance(g,h) == distance(h,g) bitwise

  // Hoelder seminorm over pairs within 0.25; on T^2 a coarser subgrid keeps
  // the pair count manageable.
  std::vector<FiberPoint> sub = pts;
  std::vector<Mat> s1 = f1, s2 = f2;
  if (q == 2 && grid > 48) {
    sub = fiber_grid(2, 48);
    s1 = detail::relative_derivative_field(g, h, sub);
    s2 = detail::relative_derivative_field(h, g, sub);
  }
  r.d_c1beta = r.d_c1 + (detail::holder_seminorm(sub, s1, beta) + detail::holder_seminorm(sub, s2, beta));
  return r;
}

}  // namespace livsic
