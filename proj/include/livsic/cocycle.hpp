#pragma once

// Cocycles x -> A(x) in Diff(N) over a base system: iteration, the skew
// product F(x, y) = (f x, A(x) y), the fibre-derivative cocycle, periodic
// orbit residuals and sampled Hoelder constants. Built-in families live in
// livsic::families.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "livsic/base_dynamics.hpp"
#include "livsic/fiber.hpp"

namespace livsic {

struct SkewPoint {
  BasePoint base;
  FiberPoint fiber;
};

using DiffeoField = std::function<Diffeo(const BasePoint&)>;

struct DerivativeTrace {
  std::vector<Mat> matrices;   // D A(f^i x)(y_i), kept only on request
  std::vector<Vec> log_svals;  // entry n-1: log sigma_j of the product of the first n matrices
  std::vector<double> log_det; // entry n-1: log |det| of that product
  SkewPoint end;               // F^n(z)
};

struct PocResidual {
  double c0 = 0;
  double c1 = 0;
};

struct HolderEstimate {
  double K = 0;          // fitted prefactor exp(intercept)
  double beta_fit = 0;   // fitted log-log slope
  double max_ratio = 0;  // max d(A x, A x') / d(x, x')^beta over the sample
  bool degenerate = false;  // every sampled distance vanished (constant cocycle)
  int pairs = 0;
};

class Cocycle {
 public:
  Cocycle(std::shared_ptr<const BaseSystem> base, int fiber_dim, DiffeoField field, std::string name,
          std::size_t tree_cap = 1000)
      : base_(std::move(base)), q_(fiber_dim), field_(std::move(field)), name_(std::move(name)), cap_(tree_cap) {}

  const BaseSystem& base() const { return *base_; }
  std::shared_ptr<const BaseSystem> base_ptr() const { return base_; }
  int fiber_dim() const { return q_; }
  const std::string& name() const { return name_; }
  std::size_t tree_cap() const { return cap_; }
  const DiffeoField& field() const { return field_; }

  Diffeo operator()(const BasePoint& x) const { return field_(x); }

  /// A^n(x): identity for n = 0, A(f^{n-1}x) o ... o A(x) for n > 0 and
  /// A(f^n x)^{-1} o ... o A(f^{-1} x)^{-1} for n < 0.
  Diffeo iterate(const BasePoint& x, int n) const {
    Diffeo g = Diffeo::identity(q_);
    BasePoint xi = x;
    if (n > 0) {
      for (int i = 0; i < n; ++i) {
        g = compose(field_(xi), g);
        check_cap(g);
        xi = base_->step(xi);
      }
    } else {
      for (int i = 0; i < -n; ++i) {
        xi = base_->inverse_step(xi);
        g = compose(field_(xi).inverse(), g);
        check_cap(g);
      }
    }
    return g;
  }

  SkewPoint skew_step(const SkewPoint& z, int n = 1) const {
    SkewPoint w = z;
    for (int i = 0; i < n; ++i) {
      w.fiber = field_(w.base).eval(w.fiber);
      w.base = base_->step(w.base);
    }
    for (int i = 0; i < -n; ++i) {
      w.base = base_->inverse_step(w.base);
      w.fiber = wrap_fiber(field_(w.base).solve_lift(w.fiber));
    }
    return w;
  }

  /// Products of fibre derivatives along the F-orbit of z. The product is
  /// carried as e^s * W * R with R upper triangular; every `refactor_every`
  /// steps W is QR-factorized and its triangular part folded into R, so
  /// nothing overflows for n up to 1e5 and beyond.
  DerivativeTrace derivative_cocycle(const SkewPoint& z, int n, int refactor_every = 10,
                                     bool keep_matrices = false) const {
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "derivative_cocycle needs n >= 1");
    if (refactor_every < 1) throw Error(ErrorCode::PreconditionViolated, "refactor interval must be >= 1");
    DerivativeTrace tr;
    tr.log_svals.reserve(static_cast<std::size_t>(n));
    tr.log_det.reserve(static_cast<std::size_t>(n));
    if (keep_matrices) tr.matrices.reserve(static_cast<std::size_t>(n));
    Mat W = Mat::Identity(q_, q_), R = Mat::Identity(q_, q_);
    double log_scale = 0, log_det = 0;
    SkewPoint w = z;
    for (int i = 1; i <= n; ++i) {
      const Jet j = field_(w.base).jet_lift(w.fiber);
      if (keep_matrices) tr.matrices.push_back(j.jacobian);
      W = j.jacobian * W;
      log_det += std::log(std::abs(j.jacobian.determinant()));
      w.fiber = wrap_fiber(j.value);
      w.base = base_->step(w.base);
      if (i % refactor_every == 0) {
        Eigen::HouseholderQR<Mat> qr(W);
        Mat Q = qr.householderQ();
        Mat T = qr.matrixQR().template triangularView<Eigen::Upper>();
        for (int k = 0; k < q_; ++k)
          if (T(k, k) < 0) {
            T.row(k) = -T.row(k);
            Q.col(k) = -Q.col(k);
          }
        R = T * R;
        const double mx = R.cwiseAbs().maxCoeff();
        R /= mx;
        log_scale += std::log(mx);
        W = Q;
      }
      tr.log_svals.push_back(log_singular_values(W * R, log_scale, log_det));
      tr.log_det.push_back(log_det);
    }
    tr.end = w;
    return tr;
  }

  /// C^0 and C^1 distance of A^n(p) from the identity along the stored orbit.
  PocResidual poc_residual(const PeriodicOrbit& p, int grid = 256) const {
    Diffeo g = Diffeo::identity(q_);
    for (const auto& x : p.orbit) {
      g = compose(field_(x), g);
      check_cap(g);
    }
    const auto d = distance(g, Diffeo::identity(q_), 1.0, grid);
    return {d.d_c0, d.d_c1};
  }

  /// Least-squares fit of log d_{C^{1+beta}}(A x, A x') against log d(x, x')
  /// over random close pairs at log-uniform separations.
  HolderEstimate estimate_holder(int samples, double beta, CounterRng& rng, int grid = 64) const {
    if (samples < 100) throw Error(ErrorCode::PreconditionViolated, "estimate_holder needs >= 100 samples");
    std::vector<double> lx, ly;
    HolderEstimate h;
    const double rmax = 0.5 * base_->hyperbolicity().delta;
    for (int s = 0; s < samples; ++s) {
      const BasePoint x = base_->random_point(rng);
      const double r = rmax * std::exp(-rng.uniform(0.0, std::log(1e3)));
      const BasePoint x2 = base_->random_point_near(x, r, rng);
      const double dm = base_->distance(x, x2);
      if (dm == 0.0) continue;
      const double da = distance(field_(x), field_(x2), beta, grid).d_c1beta;
      if (da <= 1e-12) continue;  // numerically equal maps (inversions are solved to 1e-12)
      lx.push_back(std::log(dm));
      ly.push_back(std::log(da));
      h.max_ratio = std::max(h.max_ratio, da / std::pow(dm, beta));
    }
    h.pairs = static_cast<int>(lx.size());
    if (lx.size() < 2) {
      h.degenerate = true;
      return h;
    }
    const auto [a, b] = fit_line(lx, ly);
    h.K = std::exp(a);
    h.beta_fit = b;
    return h;
  }

  static Vec log_singular_values(const Mat& m, double log_scale, double log_det) {
    ScaledMatrix s{m, log_scale, log_det};
    return s.log_singular_values();
  }

 private:
  void check_cap(const Diffeo& g) const {
    if (g.size() > cap_)
      throw Error(ErrorCode::CapExceeded, "composition tree size " + std::to_string(g.size()) + " exceeds cap");
  }

  std::shared_ptr<const BaseSystem> base_;
  int q_;
  DiffeoField field_;
  std::string name_;
  std::size_t cap_;
};

/// A(x) = u(f x) o u(x)^{-1}.
inline Cocycle make_coboundary(std::shared_ptr<const BaseSystem> base, int q, DiffeoField u, std::string name) {
  auto b = base;
  DiffeoField field = [b, u](const BasePoint& x) { return compose(u(b->step(x)), u(x).inverse()); };
  return Cocycle(std::move(base), q, std::move(field), std::move(name));
}

namespace families {

/// 2 pi <h, coords(x)>
inline double base_phase(const BaseSystem& b, const BasePoint& x, std::array<int, 2> h) {
  const auto c = b.coords(x);
  return two_pi * (h[0] * c[0] + h[1] * c[1]);
}

inline Cocycle identity(std::shared_ptr<const BaseSystem> base, int q) {
  return Cocycle(std::move(base), q, [q](const BasePoint&) { return Diffeo::identity(q); }, "identity");
}

inline Cocycle constant(std::shared_ptr<const BaseSystem> base, Diffeo g, std::string name = "constant") {
  const int q = g.dim();
  return Cocycle(std::move(base), q, [g](const BasePoint&) { return g; }, std::move(name));
}

/// R_{theta(x)}, theta(x) = offset + amp sin(2 pi <h, coords x>).
inline DiffeoField rotation_field(std::shared_ptr<const BaseSystem> base, double offset, double amp,
                                  std::array<int, 2> h) {
  return [base, offset, amp, h](const BasePoint& x) {
    return Diffeo::rotation(offset + amp * std::sin(base_phase(*base, x, h)));
  };
}

/// Circle (or torus) shear with amplitude a(x) = a0 + a1 cos(2 pi <h, coords x>).
inline DiffeoField shear_field(std::shared_ptr<const BaseSystem> base, int q, double a0, double a1,
                               std::array<int, 2> h, std::array<int, 2> k = {1, 0}, int axis = 0) {
  const double kmax = std::abs(k[static_cast<std::size_t>(axis)]);
  if (!((std::abs(a0) + std::abs(a1)) * kmax < 1.0))
    throw Error(ErrorCode::ConfigInvalid, "shear family amplitude bound |a0| + |a1| must stay below 1/|k|");
  return [base, q, a0, a1, h, k, axis](const BasePoint& x) {
    return Diffeo::shear(q, a0 + a1 * std::cos(base_phase(*base, x, h)), k, axis);
  };
}

inline Cocycle rotation(std::shared_ptr<const BaseSystem> base, double offset, double amp, std::array<int, 2> h) {
  auto f = rotation_field(base, offset, amp, h);
  return Cocycle(std::move(base), 1, std::move(f), "rotation");
}

inline Cocycle shear(std::shared_ptr<const BaseSystem> base, int q, double a0, double a1, std::array<int, 2> h,
                     std::array<int, 2> k = {1, 0}, int axis = 0) {
  auto f = shear_field(base, q, a0, a1, h, k, axis);
  return Cocycle(std::move(base), q, std::move(f), "shear");
}

/// x -> B(x) o A(x): perturbation of A by a (small) field B.
inline Cocycle perturb(const Cocycle& A, DiffeoField B, std::string name) {
  auto fa = A.field();
  return Cocycle(A.base_ptr(), A.fiber_dim(),
                 [fa, B](const BasePoint& x) { return compose(B(x), fa(x)); }, std::move(name));
}

/// Transfer-function families used to build coboundaries, with names.
struct TransferFamily {
  std::string name;
  int q;
  DiffeoField u;
};

inline std::vector<TransferFamily> transfer_families(std::shared_ptr<const BaseSystem> base) {
  std::vector<TransferFamily> out;
  out.push_back({"rotation", 1, rotation_field(base, 0.0, 0.2, {1, 0})});
  out.push_back({"shear", 1, shear_field(base, 1, 0.0, 0.3, {1, 0})});
  {
    auto rot = rotation_field(base, 0.0, 0.15, {0, 1});
    auto sh = shear_field(base, 1, 0.2, 0.1, {1, 1});
    out.push_back({"rotation-shear", 1, [rot, sh](const BasePoint& x) { return compose(rot(x), sh(x)); }});
  }
  {
    auto b = base;
    out.push_back({"torus-shear", 2, [b](const BasePoint& x) {
                     const double p1 = base_phase(*b, x, {1, 0}), p2 = base_phase(*b, x, {0, 1});
                     Vec t(2);
                     t << 0.1 * std::sin(p1), 0.05 * std::cos(p2);
                     return compose(Diffeo::translation(t), Diffeo::shear(2, 0.25 * std::cos(p2), {0, 1}, 0));
                   }});
  }
  return out;
}

}  // namespace families

}  // namespace livsic
