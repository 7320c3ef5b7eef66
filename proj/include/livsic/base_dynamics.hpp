#pragma once

// Hyperbolic base homeomorphisms: hyperbolic automorphisms of the 2-torus
// and the full two-sided shift on m symbols.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "livsic/error.hpp"
#include "livsic/linalg.hpp"
#include "livsic/rng.hpp"

namespace livsic {

/// Point of T^2, coordinates in [0,1).
struct TorusPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const TorusPoint&, const TorusPoint&) = default;
};

/// Two-sided sequence with a periodic tail: s_i = word[(i + offset) mod L].
/// The word is shared between all iterates of a point, so stepping is O(1).
struct ShiftPoint {
  std::shared_ptr<const std::vector<std::uint8_t>> word;
  std::int64_t offset = 0;

  std::uint8_t at(std::int64_t i) const {
    const auto len = static_cast<std::int64_t>(word->size());
    std::int64_t k = (i + offset) % len;
    if (k < 0) k += len;
    return (*word)[static_cast<std::size_t>(k)];
  }

  static ShiftPoint periodic(std::vector<std::uint8_t> w) {
    return ShiftPoint{std::make_shared<const std::vector<std::uint8_t>>(std::move(w)), 0};
  }
};

using BasePoint = std::variant<TorusPoint, ShiftPoint>;

inline const TorusPoint& as_torus(const BasePoint& p) { return std::get<TorusPoint>(p); }
inline const ShiftPoint& as_shift(const BasePoint& p) { return std::get<ShiftPoint>(p); }

struct HyperbolicityData {
  double epsilon = 0;   // local stable/unstable set radius
  double delta = 0;     // bracket radius
  double K0 = 1;        // prefactor of the contraction bounds
  double tau = 0;       // per-step log contraction rate
  double nu_s_max = 0;  // uniform bound on stable contraction
  double nu_u_max = 0;  // uniform bound on backward contraction along unstable sets
};

struct PeriodicOrbit {
  BasePoint point;
  int period = 1;
  std::vector<BasePoint> orbit;  // orbit[0] == point
};

struct ClosingResult {
  PeriodicOrbit p;
  BasePoint y;                    // [p, x]
  std::vector<double> trace;      // d(f^i x, f^i p), i = 0..n
  std::vector<double> trace_y_x;  // d(f^i x, f^i y)
  std::vector<double> trace_y_p;  // d(f^i p, f^i y)
  std::vector<BasePoint> y_orbit;  // f^i y, i = 0..n, without re-snapping
  double gap = 0;                 // d(x, f^n x)
  double C = 0;                   // closing constant of the model
  double tau = 0;
};

namespace detail {

inline double wrap_signed(double d) { return d - std::nearbyint(d); }

inline double mod1(double v) {
  double r = v - std::floor(v);
  return r >= 1.0 ? 0.0 : r;
}

using Int2 = std::array<std::array<std::int64_t, 2>, 2>;

inline Int2 mat_mul(const Int2& p, const Int2& q) {
  Int2 r{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      __int128 s = static_cast<__int128>(p[i][0]) * q[0][j] + static_cast<__int128>(p[i][1]) * q[1][j];
      if (s > INT64_MAX || s < INT64_MIN) throw Error(ErrorCode::CapExceeded, "integer matrix power overflows");
      r[i][j] = static_cast<std::int64_t>(s);
    }
  return r;
}

inline std::int64_t pmod(std::int64_t a, std::int64_t m) {
  std::int64_t r = a % m;
  return r < 0 ? r + m : r;
}

}  // namespace detail

/// Hyperbolic automorphism of T^2 given by an integer matrix with
/// det = +-1 and |trace| > 2. Points live on the dyadic grid 2^-52 Z^2,
/// on which the map and its inverse act exactly (integer arithmetic mod 2^52).
class ToralAutomorphism {
 public:
  static constexpr int kGridBits = 52;
  static constexpr std::uint64_t kGridMask = (std::uint64_t{1} << kGridBits) - 1;
  static constexpr double kGridScale = 0x1.0p52;

  explicit ToralAutomorphism(detail::Int2 m) : m_(m) {
    const std::int64_t det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    const std::int64_t tr = m[0][0] + m[1][1];
    if (det != 1 && det != -1)
      throw Error(ErrorCode::ConfigInvalid, "toral matrix must have determinant +-1");
    if (std::abs(tr) <= 2) throw Error(ErrorCode::ConfigInvalid, "toral matrix must have |trace| > 2");
    det_ = det;
    inv_ = {{{m[1][1] * det, -m[0][1] * det}, {-m[1][0] * det, m[0][0] * det}}};

    const double t = static_cast<double>(tr), dd = static_cast<double>(det);
    lambda_u_ = 0.5 * (t + std::copysign(std::sqrt(t * t - 4.0 * dd), t));
    lambda_s_ = dd / lambda_u_;
    eu_ = eigenvector(lambda_u_);
    es_ = eigenvector(lambda_s_);
    Eigen::Matrix2d p;
    p.col(0) = eu_;
    p.col(1) = es_;
    pinv_ = p.inverse();
    cu_ = pinv_.row(0).norm();
    cs_ = pinv_.row(1).norm();
    tau_ = std::log(std::abs(lambda_u_));

    hyp_.epsilon = 0.2;
    hyp_.delta = hyp_.epsilon / std::max(cu_, cs_);
    hyp_.K0 = 1.0;
    hyp_.tau = tau_;
    hyp_.nu_s_max = std::abs(lambda_s_);
    hyp_.nu_u_max = 1.0 / std::abs(lambda_u_);
  }

  const detail::Int2& matrix() const { return m_; }
  const HyperbolicityData& hyperbolicity() const { return hyp_; }
  double lambda_u() const { return lambda_u_; }
  double lambda_s() const { return lambda_s_; }
  const Eigen::Vector2d& unstable_direction() const { return eu_; }
  const Eigen::Vector2d& stable_direction() const { return es_; }

  /// Constant C of the closing lemma for this model.
  double closing_constant() const { return (cu_ + cs_) / (1.0 - std::exp(-tau_)); }

  static TorusPoint snap(double x, double y) {
    return TorusPoint{from_grid(to_grid(x)), from_grid(to_grid(y))};
  }

  TorusPoint step(const TorusPoint& p) const { return apply(m_, p); }
  TorusPoint inverse_step(const TorusPoint& p) const { return apply(inv_, p); }

  TorusPoint iterate(TorusPoint p, int n) const {
    for (int i = 0; i < n; ++i) p = step(p);
    for (int i = 0; i < -n; ++i) p = inverse_step(p);
    return p;
  }

  static Eigen::Vector2d difference(const TorusPoint& a, const TorusPoint& b) {
    return {detail::wrap_signed(b.x - a.x), detail::wrap_signed(b.y - a.y)};
  }

  static double distance(const TorusPoint& a, const TorusPoint& b) { return difference(a, b).norm(); }

  static TorusPoint translate(const TorusPoint& p, const Eigen::Vector2d& v) {
    return TorusPoint{detail::mod1(p.x + v(0)), detail::mod1(p.y + v(1))};
  }

  /// Unique point of W^u(y) cap W^s(y2): y + a e_u = y2 - b e_s on lifts.
  TorusPoint bracket(const TorusPoint& y, const TorusPoint& y2) const {
    const double d = distance(y, y2);
    if (d >= hyp_.delta)
      throw Error(ErrorCode::BracketOutOfRange, "d(y, y2) = " + std::to_string(d) + " >= delta");
    const Eigen::Vector2d w = difference(y, y2);
    const Eigen::Vector2d coef = pinv_ * w;
    const Eigen::Vector2d lifted = Eigen::Vector2d(y.x, y.y) + coef(0) * eu_;
    return snap(detail::mod1(lifted(0)), detail::mod1(lifted(1)));
  }

  /// |det(M^n - I)| = number of points of Fix(f^n).
  std::int64_t fixed_point_count(int n) const {
    const auto a = power_minus_identity(n);
    const __int128 det = static_cast<__int128>(a[0][0]) * a[1][1] - static_cast<__int128>(a[0][1]) * a[1][0];
    return static_cast<std::int64_t>(det < 0 ? -det : det);
  }

  /// Exactly Fix(f^n): the lattice (M^n - I)^{-1} Z^2 mod Z^2, built as the
  /// subgroup generated by the columns of (M^n - I)^{-1}.
  std::vector<PeriodicOrbit> periodic_points(int n, std::int64_t cap) const {
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "period must be >= 1");
    const std::int64_t count = fixed_point_count(n);
    if (count > cap)
      throw Error(ErrorCode::CapExceeded, "|Fix(f^" + std::to_string(n) + ")| = " + std::to_string(count));
    const auto a = power_minus_identity(n);
    const std::int64_t det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    const std::int64_t D = count;
    const std::int64_t sgn = det < 0 ? -1 : 1;
    // columns of adj(A) * sign(det); points are numerator pairs mod D
    const std::array<std::int64_t, 2> c1{detail::pmod(sgn * a[1][1], D), detail::pmod(-sgn * a[1][0], D)};
    const std::array<std::int64_t, 2> c2{detail::pmod(-sgn * a[0][1], D), detail::pmod(sgn * a[0][0], D)};

    std::set<std::pair<std::int64_t, std::int64_t>> sub;
    std::pair<std::int64_t, std::int64_t> cur{0, 0};
    do {
      sub.insert(cur);
      cur = {(cur.first + c1[0]) % D, (cur.second + c1[1]) % D};
    } while (cur != std::pair<std::int64_t, std::int64_t>{0, 0});

    std::set<std::pair<std::int64_t, std::int64_t>> all;
    std::pair<std::int64_t, std::int64_t> shift{0, 0};
    while (true) {
      bool fresh = false;
      for (const auto& s : sub) {
        auto pt = std::pair{(s.first + shift.first) % D, (s.second + shift.second) % D};
        if (all.insert(pt).second) fresh = true;
      }
      if (!fresh) break;
      shift = {(shift.first + c2[0]) % D, (shift.second + c2[1]) % D};
    }

    std::vector<PeriodicOrbit> out;
    out.reserve(all.size());
    for (const auto& [i, j] : all) out.push_back(rational_orbit(i, j, D, n));
    return out;
  }

  /// Orbit of the rational point (i/D, j/D), iterated exactly mod D.
  PeriodicOrbit rational_orbit(std::int64_t i, std::int64_t j, std::int64_t D, int n) const {
    PeriodicOrbit po;
    po.period = n;
    po.orbit.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      po.orbit.emplace_back(TorusPoint{static_cast<double>(i) / static_cast<double>(D),
                                       static_cast<double>(j) / static_cast<double>(D)});
      const __int128 ni = static_cast<__int128>(m_[0][0]) * i + static_cast<__int128>(m_[0][1]) * j;
      const __int128 nj = static_cast<__int128>(m_[1][0]) * i + static_cast<__int128>(m_[1][1]) * j;
      i = detail::pmod(static_cast<std::int64_t>(ni % D), D);
      j = detail::pmod(static_cast<std::int64_t>(nj % D), D);
    }
    po.point = po.orbit.front();
    return po;
  }

  /// Closing by exact linear algebra: p = x + e with (M^n - I) e = -w,
  /// w = f^n x - x on the nearest lift. f^i p = f^i x + M^i e is evaluated
  /// in the eigenbasis so no cancellation occurs.
  ClosingResult anosov_close(const TorusPoint& x, int n) const {
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "n must be >= 1");
    std::vector<TorusPoint> xs{x};
    for (int i = 0; i < n; ++i) xs.push_back(step(xs.back()));
    const Eigen::Vector2d w = difference(x, xs.back());
    ClosingResult r;
    r.gap = w.norm();
    if (r.gap >= hyp_.delta)
      throw Error(ErrorCode::NotRecurrent, "d(x, f^n x) = " + std::to_string(r.gap) + " >= delta");
    const Eigen::Vector2d coef = pinv_ * w;
    const double eu_coef = -coef(0) / (std::pow(lambda_u_, n) - 1.0);
    const double es_coef = -coef(1) / (std::pow(lambda_s_, n) - 1.0);
    r.C = closing_constant();
    r.tau = tau_;
    r.p.period = n;
    for (int i = 0; i <= n; ++i) {
      const Eigen::Vector2d du = eu_coef * std::pow(lambda_u_, i) * eu_;
      const Eigen::Vector2d ds = es_coef * std::pow(lambda_s_, i) * es_;
      const TorusPoint pi = translate(xs[static_cast<std::size_t>(i)], du + ds);
      if (i < n) r.p.orbit.emplace_back(pi);
      r.trace.push_back((du + ds).norm());
      r.trace_y_x.push_back(ds.norm());  // y = x + stable part of e
      r.trace_y_p.push_back(du.norm());
      r.y_orbit.emplace_back(translate(xs[static_cast<std::size_t>(i)], ds));
    }
    r.p.point = r.p.orbit.front();
    r.y = translate(x, es_coef * es_);
    return r;
  }

 private:
  static std::uint64_t to_grid(double v) {
    const double f = detail::mod1(v);
    return static_cast<std::uint64_t>(std::llround(f * kGridScale)) & kGridMask;
  }
  static double from_grid(std::uint64_t g) { return static_cast<double>(g) / kGridScale; }

  static TorusPoint apply(const detail::Int2& a, const TorusPoint& p) {
    const std::uint64_t X = to_grid(p.x), Y = to_grid(p.y);
    const std::uint64_t nx = static_cast<std::uint64_t>(a[0][0]) * X + static_cast<std::uint64_t>(a[0][1]) * Y;
    const std::uint64_t ny = static_cast<std::uint64_t>(a[1][0]) * X + static_cast<std::uint64_t>(a[1][1]) * Y;
    return TorusPoint{from_grid(nx & kGridMask), from_grid(ny & kGridMask)};
  }

  Eigen::Vector2d eigenvector(double lambda) const {
    Eigen::Vector2d v;
    const double a = static_cast<double>(m_[0][0]), b = static_cast<double>(m_[0][1]);
    const double c = static_cast<double>(m_[1][0]), d = static_cast<double>(m_[1][1]);
    if (std::abs(b) >= std::abs(c)) v = {b, lambda - a};
    else v = {lambda - d, c};
    v.normalize();
    if (v(0) < 0 || (v(0) == 0 && v(1) < 0)) v = -v;
    return v;
  }

  detail::Int2 power_minus_identity(int n) const {
    detail::Int2 p{{{1, 0}, {0, 1}}};
    for (int i = 0; i < n; ++i) p = detail::mat_mul(p, m_);
    p[0][0] -= 1;
    p[1][1] -= 1;
    return p;
  }

  detail::Int2 m_;
  detail::Int2 inv_;
  std::int64_t det_ = 1;
  double lambda_u_ = 0, lambda_s_ = 0, tau_ = 0, cu_ = 1, cs_ = 1;
  Eigen::Vector2d eu_, es_;
  Eigen::Matrix2d pinv_;
  HyperbolicityData hyp_;
};

/// Full two-sided shift on {0..m-1} with d(x,y) = 2^-k, k = min{|i| : x_i != y_i},
/// evaluated on the window |i| <= W.
class FullShift {
 public:
  FullShift(int alphabet, int window) : m_(alphabet), w_(window) {
    if (alphabet < 2 || alphabet > 255) throw Error(ErrorCode::ConfigInvalid, "alphabet must be in [2, 255]");
    if (window < 4) throw Error(ErrorCode::ConfigInvalid, "window must be >= 4");
    hyp_.epsilon = 0.5;
    hyp_.delta = 1.0;
    hyp_.K0 = 1.0;
    hyp_.tau = std::log(2.0);
    hyp_.nu_s_max = 0.5;
    hyp_.nu_u_max = 0.5;
  }

  int alphabet() const { return m_; }
  int window() const { return w_; }
  const HyperbolicityData& hyperbolicity() const { return hyp_; }
  double closing_constant() const { return 2.0; }

  static ShiftPoint step(const ShiftPoint& p) { return ShiftPoint{p.word, p.offset + 1}; }
  static ShiftPoint inverse_step(const ShiftPoint& p) { return ShiftPoint{p.word, p.offset - 1}; }

  /// Index of first disagreement within the window, or -1 if none.
  int disagreement(const ShiftPoint& a, const ShiftPoint& b) const {
    if (a.at(0) != b.at(0)) return 0;
    for (int k = 1; k <= w_; ++k)
      if (a.at(k) != b.at(k) || a.at(-k) != b.at(-k)) return k;
    return -1;
  }

  double distance(const ShiftPoint& a, const ShiftPoint& b) const {
    const int k = disagreement(a, b);
    return k < 0 ? 0.0 : std::ldexp(1.0, -k);
  }

  /// Materialize indices [-half, half) into a fresh periodic word.
  static ShiftPoint splice(const ShiftPoint& past, const ShiftPoint& future, int half) {
    std::vector<std::uint8_t> w(static_cast<std::size_t>(2 * half));
    for (int i = -half; i < half; ++i)
      w[static_cast<std::size_t>(i + half)] = i < 0 ? past.at(i) : future.at(i);
    return ShiftPoint{std::make_shared<const std::vector<std::uint8_t>>(std::move(w)), half};
  }

  ShiftPoint bracket(const ShiftPoint& y, const ShiftPoint& y2) const {
    const double d = distance(y, y2);
    if (d >= hyp_.delta) throw Error(ErrorCode::BracketOutOfRange, "d(y, y2) = " + std::to_string(d));
    return splice(y, y2, w_ + 64);
  }

  std::vector<PeriodicOrbit> periodic_points(int n, std::int64_t cap) const {
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "period must be >= 1");
    const double count = std::pow(static_cast<double>(m_), n);
    if (count > static_cast<double>(cap))
      throw Error(ErrorCode::CapExceeded, "m^n = " + std::to_string(count));
    const auto total = static_cast<std::int64_t>(count);
    std::vector<PeriodicOrbit> out;
    out.reserve(static_cast<std::size_t>(total));
    for (std::int64_t code = 0; code < total; ++code) {
      std::vector<std::uint8_t> w(static_cast<std::size_t>(n));
      std::int64_t c = code;
      for (int i = 0; i < n; ++i) {
        w[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(c % m_);
        c /= m_;
      }
      out.push_back(orbit_of(ShiftPoint::periodic(std::move(w)), n));
    }
    return out;
  }

  static PeriodicOrbit orbit_of(const ShiftPoint& p, int n) {
    PeriodicOrbit po;
    po.period = n;
    ShiftPoint cur = p;
    for (int i = 0; i < n; ++i) {
      po.orbit.emplace_back(cur);
      cur = step(cur);
    }
    po.point = po.orbit.front();
    return po;
  }

  /// Closing by periodizing the block x_0..x_{n-1}.
  ClosingResult anosov_close(const ShiftPoint& x, int n) const {
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "n must be >= 1");
    ShiftPoint xn = x;
    for (int i = 0; i < n; ++i) xn = step(xn);
    ClosingResult r;
    r.gap = distance(x, xn);
    if (r.gap >= hyp_.delta) throw Error(ErrorCode::NotRecurrent, "d(x, f^n x) >= delta");
    std::vector<std::uint8_t> block(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) block[static_cast<std::size_t>(i)] = x.at(i);
    r.p = orbit_of(ShiftPoint::periodic(std::move(block)), n);
    const ShiftPoint p0 = std::get<ShiftPoint>(r.p.point);
    r.y = splice(p0, x, w_ + n + 64);
    r.C = closing_constant();
    r.tau = hyp_.tau;
    ShiftPoint xi = x, pi = p0, yi = std::get<ShiftPoint>(r.y);
    for (int i = 0; i <= n; ++i) {
      r.trace.push_back(distance(xi, pi));
      r.trace_y_x.push_back(distance(xi, yi));
      r.trace_y_p.push_back(distance(pi, yi));
      r.y_orbit.emplace_back(yi);
      xi = step(xi);
      pi = step(pi);
      yi = step(yi);
    }
    return r;
  }

 private:
  int m_;
  int w_;
  HyperbolicityData hyp_;
};

/// Runtime-selected base model.
class BaseSystem {
 public:
  explicit BaseSystem(ToralAutomorphism t) : impl_(std::move(t)) {}
  explicit BaseSystem(FullShift s) : impl_(std::move(s)) {}

  static BaseSystem cat_map() { return BaseSystem(ToralAutomorphism({{{2, 1}, {1, 1}}})); }

  bool is_torus() const { return std::holds_alternative<ToralAutomorphism>(impl_); }
  const ToralAutomorphism& torus() const { return std::get<ToralAutomorphism>(impl_); }
  const FullShift& shift() const { return std::get<FullShift>(impl_); }

  const HyperbolicityData& hyperbolicity() const {
    return std::visit([](const auto& s) -> const HyperbolicityData& { return s.hyperbolicity(); }, impl_);
  }
  double closing_constant() const {
    return std::visit([](const auto& s) { return s.closing_constant(); }, impl_);
  }

  BasePoint step(const BasePoint& x) const {
    if (is_torus()) return torus().step(as_torus(x));
    return FullShift::step(as_shift(x));
  }
  BasePoint inverse_step(const BasePoint& x) const {
    if (is_torus()) return torus().inverse_step(as_torus(x));
    return FullShift::inverse_step(as_shift(x));
  }
  BasePoint iterate(BasePoint x, int n) const {
    for (int i = 0; i < n; ++i) x = step(x);
    for (int i = 0; i < -n; ++i) x = inverse_step(x);
    return x;
  }

  double distance(const BasePoint& a, const BasePoint& b) const {
    if (is_torus()) return ToralAutomorphism::distance(as_torus(a), as_torus(b));
    return shift().distance(as_shift(a), as_shift(b));
  }

  BasePoint bracket(const BasePoint& y, const BasePoint& y2) const {
    if (is_torus()) return torus().bracket(as_torus(y), as_torus(y2));
    return shift().bracket(as_shift(y), as_shift(y2));
  }

  std::vector<PeriodicOrbit> periodic_points(int n, std::int64_t cap = 2'000'000) const {
    if (is_torus()) return torus().periodic_points(n, cap);
    return shift().periodic_points(n, cap);
  }

  std::int64_t fixed_point_count(int n) const {
    if (is_torus()) return torus().fixed_point_count(n);
    return static_cast<std::int64_t>(std::pow(shift().alphabet(), n));
  }

  ClosingResult anosov_close(const BasePoint& x, int n) const {
    if (is_torus()) return torus().anosov_close(as_torus(x), n);
    return shift().anosov_close(as_shift(x), n);
  }

  /// Coordinates in [0,1)^2 used by base-dependent cocycle families. On the
  /// shift these are truncated base-m expansions of the future and the past
  /// (8 symbols each), so every family is a cylinder function there.
  std::array<double, 2> coords(const BasePoint& x) const {
    if (is_torus()) {
      const auto& t = as_torus(x);
      return {t.x, t.y};
    }
    const auto& s = as_shift(x);
    const double m = shift().alphabet();
    double fut = 0, past = 0, scale = 1.0 / m;
    for (int i = 0; i < 8; ++i) {
      fut += s.at(i) * scale;
      past += s.at(-1 - i) * scale;
      scale /= m;
    }
    return {fut, past};
  }

  BasePoint random_point(CounterRng& rng) const {
    if (is_torus()) return ToralAutomorphism::snap(rng.uniform(), rng.uniform());
    const int len = 2 * shift().window() + 257;
    std::vector<std::uint8_t> w(static_cast<std::size_t>(len));
    for (auto& c : w) c = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(shift().alphabet())));
    return ShiftPoint{std::make_shared<const std::vector<std::uint8_t>>(std::move(w)), len / 2};
  }

  /// Random point with d(x, result) <= r (torus: uniform in the disc;
  /// shift: agree on |i| < k with 2^-k <= r, fresh symbols elsewhere).
  BasePoint random_point_near(const BasePoint& x, double r, CounterRng& rng) const {
    if (is_torus()) {
      const double rad = r * std::sqrt(rng.uniform());
      const double ang = two_pi * rng.uniform();
      const auto& t = as_torus(x);
      return ToralAutomorphism::snap(detail::mod1(t.x + rad * std::cos(ang)),
                                     detail::mod1(t.y + rad * std::sin(ang)));
    }
    const int k = std::max(1, static_cast<int>(std::ceil(-std::log2(r) - 1e-12)));
    const int half = shift().window() + 128;
    const auto& s = as_shift(x);
    std::vector<std::uint8_t> w(static_cast<std::size_t>(2 * half));
    for (int i = -half; i < half; ++i) {
      const bool keep = std::abs(i) < k;
      w[static_cast<std::size_t>(i + half)] =
          keep ? s.at(i) : static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(shift().alphabet())));
    }
    return ShiftPoint{std::make_shared<const std::vector<std::uint8_t>>(std::move(w)), half};
  }

  /// Integer cell key at resolution `cell` (torus) or cylinder radius
  /// derived from it (shift); points sharing a key are within ~cell.
  std::int64_t cell_key(const BasePoint& x, double cell) const {
    if (is_torus()) {
      const auto n = static_cast<std::int64_t>(std::ceil(1.0 / cell));
      const auto& t = as_torus(x);
      const auto i = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(t.x * static_cast<double>(n)));
      const auto j = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(t.y * static_cast<double>(n)));
      return i * n + j;
    }
    const int radius = cylinder_radius(cell);
    std::int64_t key = 0;
    const auto& s = as_shift(x);
    for (int i = -radius; i <= radius; ++i) key = key * shift().alphabet() + s.at(i);
    return key;
  }

  std::int64_t cell_count(double cell) const {
    if (is_torus()) {
      const auto n = static_cast<std::int64_t>(std::ceil(1.0 / cell));
      return n * n;
    }
    return static_cast<std::int64_t>(std::pow(shift().alphabet(), 2 * cylinder_radius(cell) + 1));
  }

  /// An orbit segment that is epsilon_dense-dense: every cell of a covering
  /// grid of size epsilon_dense/2 contains a point of the segment.
  std::vector<BasePoint> transitive_segment(double epsilon_dense, std::size_t max_len,
                                            const BasePoint* start = nullptr) const {
    if (!(epsilon_dense > 0)) throw Error(ErrorCode::PreconditionViolated, "epsilon_dense must be > 0");
    const double cell = epsilon_dense / 2.0;
    const std::int64_t cells = cell_count(cell);
    if (cells > 50'000'000) throw Error(ErrorCode::CapExceeded, "covering grid too fine");
    BasePoint x = start ? *start : default_transitive_start(cell);
    std::vector<char> hit(static_cast<std::size_t>(cells), 0);
    std::int64_t covered = 0;
    std::vector<BasePoint> seg;
    while (seg.size() < max_len) {
      const auto k = static_cast<std::size_t>(cell_key(x, cell));
      if (!hit[k]) {
        hit[k] = 1;
        ++covered;
      }
      seg.push_back(x);
      if (covered == cells) return seg;
      x = step(x);
    }
    throw Error(ErrorCode::NotDenseEnough,
                "covered " + std::to_string(covered) + " of " + std::to_string(cells) + " cells (fraction " +
                    std::to_string(static_cast<double>(covered) / static_cast<double>(cells)) + ") in " +
                    std::to_string(max_len) + " steps");
  }

 private:
  int cylinder_radius(double cell) const {
    // diameter of a cylinder fixing |i| <= R is 2^-(R+1)
    return std::max(0, static_cast<int>(std::ceil(-std::log2(cell) - 1e-12)) - 1);
  }

  BasePoint default_transitive_start(double cell) const {
    if (is_torus()) {
      // golden-ratio point snapped to the grid
      return ToralAutomorphism::snap(0.6180339887498949, 0.41421356237309503);
    }
    // concatenation of all words of length 2R+1, centred on the first word
    const int radius = cylinder_radius(cell);
    const int len = 2 * radius + 1;
    const int m = shift().alphabet();
    const auto total = static_cast<std::int64_t>(std::pow(m, len));
    std::vector<std::uint8_t> w;
    w.reserve(static_cast<std::size_t>(total * len));
    for (std::int64_t code = 0; code < total; ++code) {
      std::int64_t c = code;
      std::vector<std::uint8_t> word(static_cast<std::size_t>(len));
      for (int i = len - 1; i >= 0; --i) {
        word[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(c % m);
        c /= m;
      }
      w.insert(w.end(), word.begin(), word.end());
    }
    return ShiftPoint{std::make_shared<const std::vector<std::uint8_t>>(std::move(w)), radius};
  }

  std::variant<ToralAutomorphism, FullShift> impl_;
};

}  // namespace livsic
